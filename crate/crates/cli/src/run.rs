use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use nucpol::hamiltonian::{HNucSpec, SystemParams};
use nucpol::largek::{
    diagonal_record, diagonal_record_uneven, required_m, required_m_uneven, DiagonalModelParams,
};
use nucpol::propagator::{conditioned_blocks_capped, spectral_report, ConditionedPropagator};
use nucpol::protocol::{
    expected_success_decay, run_conditioned, run_trajectory, DecaySummary, TrajectoryPolicy,
};
use nucpol::spinspace::SectorBasis;
use nucpol::states::even_polarized;
use nucpol::{CMat, ProtocolRecord, SpectralReport, C};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{Format, HnucKind, Mode, RunConfig, DEFAULT_EXACT_M_MAX};
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const CUSTOM_HNUC_TOL: f64 = 1e-12;

/// Written next to the primary output as `<out>.meta.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub fingerprint: String,
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Value>,
}

pub struct RunOutput {
    pub body: String,
    pub summary: Option<Value>,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct LargekReport<'a> {
    model: &'a str,
    K: u32,
    a: f64,
    Vbar: f64,
    theta: f64,
    required_M: u64,
    decay: DecaySummary,
    record: &'a ProtocolRecord,
}

#[derive(Serialize)]
struct SpectrumOutput<'a> {
    fingerprint: &'a str,
    spectral_gap: f64,
    degenerate: bool,
    #[serde(flatten)]
    report: &'a SpectralReport,
}

/// SHA-256 over the emitted config with output location and format removed,
/// so the same physics always fingerprints the same.
pub fn fingerprint(cfg: &RunConfig) -> String {
    let mut canonical = cfg.clone();
    canonical.output = None;
    canonical.format = Format::default();
    let digest = Sha256::digest(canonical.emit().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Full-space `2^K × 2^K` matrix indexed by occupation word (bit `i` set =
/// nucleus `i` up), as JSON `{"re": [[..]], "im": [[..]]}` with `im` optional.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomMatrix {
    re: Vec<Vec<f64>>,
    #[serde(default)]
    im: Option<Vec<Vec<f64>>>,
}

fn load_custom_hnuc(path: &Path, k: u32) -> Result<HNucSpec<f64>, CliError> {
    let bad = |msg: String| CliError::Config(format!("hnuc_file {}: {msg}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let raw: CustomMatrix = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let n = 1usize << k;
    let shape_ok = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
    if !shape_ok(&raw.re) || raw.im.as_ref().is_some_and(|m| !shape_ok(m)) {
        return Err(bad(format!("expected a {n}×{n} matrix")));
    }
    let full = CMat::<f64>::from_fn(n, n, |r, c| {
        C::new(raw.re[r][c], raw.im.as_ref().map_or(0.0, |m| m[r][c]))
    });
    for r in 0..n {
        for c in 0..n {
            let z = full[(r, c)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(bad("non-finite entry".into()));
            }
            if (z - full[(c, r)].conj()).norm() > CUSTOM_HNUC_TOL {
                return Err(bad(format!("not Hermitian at ({r},{c})")));
            }
            if r.count_ones() != c.count_ones() && z.norm() > CUSTOM_HNUC_TOL {
                return Err(bad(format!(
                    "entry ({r},{c}) couples different I_z sectors"
                )));
            }
        }
    }
    let full = Arc::new(full);
    Ok(HNucSpec::Custom(Arc::new(move |basis: &SectorBasis| {
        let cfgs = basis.configs();
        Ok(CMat::from_fn(cfgs.len(), cfgs.len(), |r, c| {
            full[(cfgs[r].0 as usize, cfgs[c].0 as usize)]
        }))
    })))
}

pub fn system_params(cfg: &RunConfig) -> Result<SystemParams<f64>, CliError> {
    let t = cfg.tau_products();
    let hnuc = match cfg.hnuc.unwrap_or(HnucKind::None) {
        HnucKind::None => HNucSpec::None,
        HnucKind::Dipolar => {
            let m = cfg.dipolar_tau().expect("validated");
            let k = cfg.K as usize;
            HNucSpec::SecularDipolar(DMatrix::from_fn(k, k, |i, j| m[i][j]))
        }
        HnucKind::CustomFile => {
            load_custom_hnuc(cfg.hnuc_file.as_deref().expect("validated"), cfg.K)?
        }
    };
    Ok(SystemParams::new(t.hyperfine, t.alphas)?
        .with_zeeman(t.electron_zeeman, t.nuclear_zeeman)
        .with_overhauser(cfg.overhauser)
        .with_convention(cfg.convention)
        .with_hnuc(hnuc)?)
}

fn propagator(cfg: &RunConfig) -> Result<ConditionedPropagator<f64>, CliError> {
    Ok(conditioned_blocks_capped(
        &system_params(cfg)?,
        1.0,
        cfg.dimension_cap,
    )?)
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s
}

/// Runs the configured pipeline and renders the primary output. Validation
/// must already have happened.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let fp = fingerprint(cfg);
    match cfg.mode {
        Mode::Exact => {
            let prop = propagator(cfg)?;
            let rho = even_polarized::<f64>(cfg.K, cfg.a.expect("validated"))?;
            let mut rec = run_conditioned(&rho, &prop, cfg.M_max.unwrap_or(DEFAULT_EXACT_M_MAX))?;
            rec.fingerprint = Some(fp);
            let decay = expected_success_decay(&rec)?;
            let summary = serde_json::json!({
                "final_expected_Iz": rec.last().expected_iz,
                "final_log10_P_M": rec.last().log10_p_m,
                "decay": decay,
            });
            let body = match cfg.format {
                Format::Csv => rec.to_csv(),
                Format::Json => json(&rec),
            };
            Ok(RunOutput {
                body,
                summary: Some(summary),
            })
        }
        Mode::Trajectory => {
            let prop = propagator(cfg)?;
            let rho = even_polarized::<f64>(cfg.K, cfg.a.expect("validated"))?;
            let policy = TrajectoryPolicy {
                max_attempts: cfg.max_attempts.expect("validated"),
                target_streak: cfg
                    .target_streak
                    .unwrap_or(cfg.M_max.unwrap_or(DEFAULT_EXACT_M_MAX)),
                on_failure: cfg.failure_policy,
            };
            let rec = run_trajectory(&rho, &prop, cfg.seed, policy)?;
            let summary = serde_json::json!({
                "reached_target": rec.reached_target,
                "restarts": rec.restarts,
                "final_expected_Iz": rec.final_expected_iz,
            });
            let body = match cfg.format {
                Format::Csv => rec.to_csv(),
                Format::Json => json(&serde_json::json!({ "fingerprint": fp, "trajectory": rec })),
            };
            Ok(RunOutput {
                body,
                summary: Some(summary),
            })
        }
        Mode::Spectrum => {
            let report = spectral_report(&propagator(cfg)?, cfg.threshold)?;
            let summary = serde_json::json!({
                "spectral_gap": report.spectral_gap(),
                "degenerate_eigenvalues": report.total_degenerate(),
            });
            let body = match cfg.format {
                Format::Csv => spectrum_csv(&report),
                Format::Json => json(&SpectrumOutput {
                    fingerprint: &fp,
                    spectral_gap: report.spectral_gap(),
                    degenerate: report.is_degenerate(),
                    report: &report,
                }),
            };
            Ok(RunOutput {
                body,
                summary: Some(summary),
            })
        }
        Mode::Largek | Mode::LargekUneven => {
            let params = DiagonalModelParams::new(
                cfg.K,
                cfg.a.expect("validated"),
                cfg.Vbar.expect("validated"),
            )?;
            let uneven = cfg.mode == Mode::LargekUneven;
            let required = if uneven {
                required_m_uneven(params, cfg.theta)?
            } else {
                required_m(params, cfg.theta)?
            };
            let m_max = cfg.M_max.unwrap_or(required.max(1));
            let mut rec = if uneven {
                diagonal_record_uneven(params, m_max)?
            } else {
                diagonal_record(params, m_max)
            };
            rec.fingerprint = Some(fp);
            let decay = expected_success_decay(&rec)?;
            let report = LargekReport {
                model: &rec.model,
                K: cfg.K,
                a: params.a,
                Vbar: params.vbar,
                theta: cfg.theta,
                required_M: required,
                decay,
                record: &rec,
            };
            let summary = serde_json::json!({ "required_M": required, "decay": decay });
            let body = match cfg.format {
                Format::Csv => rec.to_csv(),
                Format::Json => json(&report),
            };
            Ok(RunOutput {
                body,
                summary: Some(summary),
            })
        }
    }
}

fn spectrum_csv(report: &SpectralReport) -> String {
    let mut out = String::from("sector_two_Iz,re,im,modulus,degenerate\n");
    let top = report.sectors.last().map(|s| s.sector_two_iz);
    for s in &report.sectors {
        for (&(re, im), &m) in s.eigenvalues.iter().zip(&s.eigen_moduli) {
            let flagged = Some(s.sector_two_iz) != top && m >= 1.0 - report.threshold;
            let _ = writeln!(
                out,
                "{},{re},{im},{m},{}",
                s.sector_two_iz,
                u8::from(flagged)
            );
        }
    }
    out
}

pub fn metadata_path(out: &Path) -> std::path::PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub fn metadata_json(meta: &Metadata) -> String {
    json(meta)
}

use std::path::PathBuf;

use nucpol::hamiltonian::CouplingConvention;
use nucpol::propagator::{DEFAULT_DEGENERACY_THRESHOLD, DEFAULT_DIMENSION_CAP};
use nucpol::protocol::FailurePolicy;
use nucpol::spinspace::binomial_exact;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_THETA: f64 = 0.999;
pub const DEFAULT_EXACT_M_MAX: u64 = 50;
const ALPHA_RENORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    Trajectory,
    Spectrum,
    Largek,
    LargekUneven,
}

impl Mode {
    pub fn is_exact_engine(self) -> bool {
        matches!(self, Self::Exact | Self::Trajectory | Self::Spectrum)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniformTag {
    Uniform,
}

/// `alpha = [..]`, `alpha = "uniform"` or `alpha = { decay = .. }`
/// (`αᵢ ∝ exp(−decay·i)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    List(Vec<f64>),
    Uniform(UniformTag),
    Exponential { decay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HnucKind {
    None,
    Dipolar,
    CustomFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RunConfig {
    pub mode: Mode,
    pub K: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub A_alpha_tau: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperfine_A: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaSpec>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electron_zeeman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electron_zeeman_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuclear_zeeman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuclear_zeeman_tau: Option<f64>,
    #[serde(default = "yes")]
    pub overhauser: bool,
    #[serde(default)]
    pub convention: CouplingConvention,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hnuc: Option<HnucKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_tau_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hnuc_file: Option<PathBuf>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub M_max: Option<u64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub Vbar: Option<f64>,

    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_streak: Option<u64>,
    #[serde(default)]
    pub failure_policy: FailurePolicy,

    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_cap")]
    pub dimension_cap: usize,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

fn yes() -> bool {
    true
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

fn default_threshold() -> f64 {
    DEFAULT_DEGENERACY_THRESHOLD
}

fn default_cap() -> usize {
    DEFAULT_DIMENSION_CAP
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => {
            Err(invalid(key, format!("must be positive, got {x}")))
        }
        _ => Ok(()),
    }
}

fn finite(key: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !x.is_finite() => Err(invalid(key, "must be finite")),
        _ => Ok(()),
    }
}

/// Couplings reduced to products with `τ`; dynamics then run with `τ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TauProducts {
    pub hyperfine: f64,
    pub alphas: Vec<f64>,
    pub electron_zeeman: f64,
    pub nuclear_zeeman: f64,
}

impl RunConfig {
    /// Parses and validates; returns warnings alongside the config.
    pub fn parse(text: &str) -> Result<(Self, Vec<String>), CliError> {
        let mut cfg = Self::from_toml(text)?;
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    /// Deserializes without validating, so callers can apply overrides first.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().trim().to_string()))
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field for the selected mode, normalizes an explicit
    /// `alpha` list, and enforces the exact-mode dimension cap.
    pub fn validate(&mut self) -> Result<Vec<String>, CliError> {
        let mut warnings = Vec::new();
        if self.K == 0 {
            return Err(invalid("K", "at least one nucleus required"));
        }
        if let Some(a) = self.a {
            if !(0.0..=1.0).contains(&a) {
                return Err(invalid("a", format!("must lie in [0, 1], got {a}")));
            }
        }
        positive("tau", self.tau)?;
        positive("hyperfine_A", self.hyperfine_A)?;
        for (k, v) in [
            ("electron_zeeman", self.electron_zeeman),
            ("electron_zeeman_tau", self.electron_zeeman_tau),
            ("nuclear_zeeman", self.nuclear_zeeman),
            ("nuclear_zeeman_tau", self.nuclear_zeeman_tau),
            ("b_tau", self.b_tau),
        ] {
            finite(k, v)?;
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(invalid(
                "theta",
                format!("must lie in (0, 1), got {}", self.theta),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("threshold", "must lie in (0, 1)"));
        }
        if self.electron_zeeman.is_some() && self.electron_zeeman_tau.is_some() {
            return Err(invalid(
                "electron_zeeman",
                "give either the energy or the τ-product, not both",
            ));
        }
        if self.nuclear_zeeman.is_some() && self.nuclear_zeeman_tau.is_some() {
            return Err(invalid(
                "nuclear_zeeman",
                "give either the energy or the τ-product, not both",
            ));
        }
        if (self.electron_zeeman.is_some()
            || self.nuclear_zeeman.is_some()
            || self.hyperfine_A.is_some())
            && self.tau.is_none()
        {
            return Err(invalid(
                "tau",
                "required when couplings are given as energies",
            ));
        }

        match self.mode {
            Mode::Largek | Mode::LargekUneven => {
                if self.a.is_none() {
                    return Err(invalid("a", "required for large-K modes"));
                }
                match self.Vbar {
                    Some(v) if v > 0.0 && v < 1.0 => {}
                    Some(v) => return Err(invalid("Vbar", format!("must lie in (0, 1), got {v}"))),
                    None => return Err(invalid("Vbar", "required for large-K modes")),
                }
                if self.mode == Mode::LargekUneven {
                    let frozen = self.a.unwrap() * f64::from(self.K);
                    if (frozen - frozen.round()).abs() > 1e-9 {
                        return Err(invalid(
                            "a",
                            format!("aK = {frozen} must be an integer for the uneven model"),
                        ));
                    }
                }
            }
            _ => {
                self.check_cap()?;
                self.validate_couplings(&mut warnings)?;
                if self.mode != Mode::Spectrum {
                    match self.a {
                        None => return Err(invalid("a", "required for this mode")),
                        Some(_) if self.K % 2 == 1 => {
                            return Err(invalid(
                                "K",
                                "the even polarized initial state needs an even number of nuclei",
                            ))
                        }
                        _ => {}
                    }
                }
                if self.mode == Mode::Trajectory && self.max_attempts.is_none() {
                    return Err(invalid("max_attempts", "required for trajectory mode"));
                }
            }
        }
        if self.M_max == Some(0) {
            return Err(invalid("M_max", "must be at least 1"));
        }
        Ok(warnings)
    }

    fn validate_couplings(&mut self, warnings: &mut Vec<String>) -> Result<(), CliError> {
        let k = self.K as usize;
        match (&self.A_alpha_tau, self.hyperfine_A) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "A_alpha_tau",
                    "give either A_alpha_tau or hyperfine_A with alpha",
                ))
            }
            (None, None) => {
                return Err(invalid(
                    "A_alpha_tau",
                    "hyperfine couplings missing (A_alpha_tau or hyperfine_A)",
                ))
            }
            (Some(v), None) => {
                if self.alpha.is_some() {
                    return Err(invalid("alpha", "not used together with A_alpha_tau"));
                }
                if v.len() != k {
                    return Err(invalid(
                        "A_alpha_tau",
                        format!("{} entries for K = {k}", v.len()),
                    ));
                }
                if v.iter().any(|x| !x.is_finite()) || v.iter().all(|&x| x == 0.0) {
                    return Err(invalid(
                        "A_alpha_tau",
                        "entries must be finite and not all zero",
                    ));
                }
            }
            (None, Some(_)) => match &mut self.alpha {
                None => return Err(invalid("alpha", "required with hyperfine_A")),
                Some(AlphaSpec::List(v)) => {
                    if v.len() != k {
                        return Err(invalid("alpha", format!("{} entries for K = {k}", v.len())));
                    }
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !norm.is_finite() || norm == 0.0 {
                        return Err(invalid("alpha", "entries must be finite and not all zero"));
                    }
                    if (norm - 1.0).abs() > ALPHA_RENORM_TOL {
                        warnings.push(format!(
                            "alpha has norm {norm}; renormalized to unit length"
                        ));
                        v.iter_mut().for_each(|x| *x /= norm);
                    }
                }
                Some(AlphaSpec::Uniform(_)) => {}
                Some(AlphaSpec::Exponential { decay }) => {
                    if !(decay.is_finite() && *decay >= 0.0) {
                        return Err(invalid("alpha.decay", "must be finite and nonnegative"));
                    }
                }
            },
        }

        let kind = self
            .hnuc
            .unwrap_or(if self.b_tau.is_some() || self.b_tau_matrix.is_some() {
                HnucKind::Dipolar
            } else if self.hnuc_file.is_some() {
                HnucKind::CustomFile
            } else {
                HnucKind::None
            });
        match kind {
            HnucKind::None => {
                if self.b_tau.is_some() || self.b_tau_matrix.is_some() || self.hnuc_file.is_some() {
                    return Err(invalid(
                        "hnuc",
                        "\"none\" conflicts with b_tau, b_tau_matrix or hnuc_file",
                    ));
                }
            }
            HnucKind::Dipolar => {
                if self.hnuc_file.is_some() {
                    return Err(invalid(
                        "hnuc_file",
                        "only used with hnuc = \"custom-file\"",
                    ));
                }
                match (&self.b_tau, &self.b_tau_matrix) {
                    (Some(_), Some(_)) => {
                        return Err(invalid("b_tau", "give either b_tau or b_tau_matrix"))
                    }
                    (None, None) => {
                        return Err(invalid(
                            "b_tau",
                            "dipolar coupling needs b_tau or b_tau_matrix",
                        ))
                    }
                    (None, Some(m)) => {
                        if m.len() != k || m.iter().any(|r| r.len() != k) {
                            return Err(invalid("b_tau_matrix", format!("must be {k}×{k}")));
                        }
                        for (i, row) in m.iter().enumerate() {
                            if row[i] != 0.0 {
                                return Err(invalid("b_tau_matrix", "diagonal must be zero"));
                            }
                            for (j, x) in row.iter().enumerate().take(i) {
                                if !x.is_finite() || *x != m[j][i] {
                                    return Err(invalid(
                                        "b_tau_matrix",
                                        format!("not symmetric at ({i},{j})"),
                                    ));
                                }
                            }
                        }
                    }
                    (Some(_), None) => {}
                }
            }
            HnucKind::CustomFile => {
                if self.b_tau.is_some() || self.b_tau_matrix.is_some() {
                    return Err(invalid("hnuc", "custom-file conflicts with b_tau"));
                }
                if self.hnuc_file.is_none() {
                    return Err(invalid("hnuc_file", "required with hnuc = \"custom-file\""));
                }
                if self.K > 12 {
                    return Err(invalid(
                        "hnuc_file",
                        "full-space matrices are limited to K ≤ 12",
                    ));
                }
            }
        }
        self.hnuc = Some(kind);
        Ok(())
    }

    fn check_cap(&self) -> Result<(), CliError> {
        // largest J sector: electron-up and electron-down blocks together
        let n = u64::from(self.K) + 1;
        let dim = binomial_exact(n, n / 2)
            .map_or(usize::MAX, |d| usize::try_from(d).unwrap_or(usize::MAX));
        if dim > self.dimension_cap {
            return Err(CliError::Cap(format!(
                "K = {} needs sector dimension {dim} > dimension_cap {}; use mode = \"largek\"",
                self.K, self.dimension_cap
            )));
        }
        Ok(())
    }

    /// Couplings as τ-products. Only meaningful after [`RunConfig::validate`].
    pub fn tau_products(&self) -> TauProducts {
        let tau = self.tau.unwrap_or(1.0);
        let k = self.K as usize;
        let (hyperfine, raw) = match (&self.A_alpha_tau, self.hyperfine_A) {
            (Some(v), _) => (v.iter().map(|x| x * x).sum::<f64>().sqrt(), v.clone()),
            (None, Some(a)) => {
                let raw = match self.alpha.as_ref().expect("validated") {
                    AlphaSpec::List(v) => v.clone(),
                    AlphaSpec::Uniform(_) => vec![1.0; k],
                    AlphaSpec::Exponential { decay } => {
                        (0..k).map(|i| (-decay * i as f64).exp()).collect()
                    }
                };
                (a * tau, raw)
            }
            (None, None) => (0.0, vec![0.0; k]),
        };
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let zeeman = |energy: Option<f64>, product: Option<f64>| {
            product.or(energy.map(|e| e * tau)).unwrap_or(0.0)
        };
        TauProducts {
            hyperfine,
            alphas: raw.iter().map(|x| x / norm).collect(),
            electron_zeeman: zeeman(self.electron_zeeman, self.electron_zeeman_tau),
            nuclear_zeeman: zeeman(self.nuclear_zeeman, self.nuclear_zeeman_tau),
        }
    }

    /// Dipolar couplings as a τ-product matrix, if any.
    pub fn dipolar_tau(&self) -> Option<Vec<Vec<f64>>> {
        let k = self.K as usize;
        if let Some(m) = &self.b_tau_matrix {
            return Some(m.clone());
        }
        self.b_tau.map(|b| {
            (0..k)
                .map(|i| (0..k).map(|j| if i == j { 0.0 } else { b }).collect())
                .collect()
        })
    }
}

//! Repeated-measurement protocol: post-selected evolution, success
//! probabilities and sampled measurement trajectories.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::propagator::ConditionedPropagator;
use crate::scalar::{c, CMat, Real};
use crate::spinspace::sectors;
use crate::states::{expected_iz, log_sum_exp, weight_c, BlockedDensity, DensityBlock};

/// Per-step success probabilities below this are reported as underflow.
pub const MIN_STEP_PROBABILITY: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolPoint {
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "expected_Iz")]
    pub expected_iz: f64,
    #[serde(rename = "log10_P_M")]
    pub log10_p_m: f64,
}

/// `⟨I_z⟩_M` and `P_M` for `M = 0, 1, …`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub model: String,
    /// Total number of nuclei, frozen ones included.
    #[serde(rename = "K")]
    pub k: u64,
    pub frozen_offset: f64,
    pub points: Vec<ProtocolPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

pub const CSV_HEADER: &str = "M,expected_Iz,log10_P_M";

impl ProtocolRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.m, p.expected_iz, p.log10_p_m);
        }
        out
    }

    pub fn last(&self) -> &ProtocolPoint {
        self.points
            .last()
            .expect("record has at least the M = 0 point")
    }
}

fn hermitize<T: Real>(m: &CMat<T>) -> CMat<T> {
    (m + m.adjoint()) * c(T::lit(0.5))
}

fn trace_re<T: Real>(m: &CMat<T>) -> f64 {
    m.trace().re.to_f64_lossy()
}

fn check_compatible<T: Real>(
    rho: &BlockedDensity<T>,
    prop: &ConditionedPropagator<T>,
) -> Result<()> {
    if rho.k() != prop.k() {
        return domain(format!(
            "density over K = {} used with a propagator over K = {}",
            rho.k(),
            prop.k()
        ));
    }
    Ok(())
}

/// Applies `V` (or `W` when `down`, moving each block one sector up) block by
/// block. Returns unnormalized entries and the log of their total weight
/// relative to the input.
fn apply_kraus<T: Real>(
    rho: &BlockedDensity<T>,
    prop: &ConditionedPropagator<T>,
    down: bool,
) -> Result<(Vec<DensityBlock<T>>, f64)> {
    let mut out = Vec::with_capacity(rho.entries().len());
    for e in rho.entries() {
        let blocks = prop
            .block(e.sector)
            .ok_or_else(|| Error::Domain("sector missing from propagator".into()))?;
        let (op, target) = if down {
            let w = blocks.w.as_ref().ok_or_else(|| {
                Error::Domain("propagator has no down-outcome Kraus operator".into())
            })?;
            match e.sector.raised() {
                Some(r) => (w, r),
                None => continue,
            }
        } else {
            (&blocks.v, e.sector)
        };
        let mapped = hermitize(&(op * &e.block * op.adjoint()));
        let t = trace_re(&mapped);
        if !(t > 0.0) {
            continue;
        }
        out.push(DensityBlock {
            sector: target,
            log_weight: e.log_weight + t.ln(),
            block: mapped * c(T::lit(1.0 / t)),
        });
    }
    let log_p = log_sum_exp(out.iter().map(|e| e.log_weight)) - rho.log_total_weight();
    Ok((out, log_p))
}

/// One successful (spin-up) measurement: `ρ → VρV†/P₁`. Returns the updated
/// state and `ln P₁`.
pub fn step_conditioned<T: Real>(
    rho: &BlockedDensity<T>,
    prop: &ConditionedPropagator<T>,
) -> Result<(BlockedDensity<T>, f64)> {
    check_compatible(rho, prop)?;
    let (entries, log_p) = apply_kraus(rho, prop, false)?;
    if !(log_p >= MIN_STEP_PROBABILITY.ln()) {
        return Err(Error::Underflow { log_p });
    }
    Ok((
        BlockedDensity::new(rho.k(), entries, rho.frozen_offset())?,
        log_p,
    ))
}

fn record_from<T: Real>(
    model: &str,
    rho: &BlockedDensity<T>,
    prop: &ConditionedPropagator<T>,
    m_max: u64,
) -> Result<ProtocolRecord> {
    let mut state = rho.clone();
    let mut log_p = 0.0;
    let mut points = vec![ProtocolPoint {
        m: 0,
        expected_iz: expected_iz(&state),
        log10_p_m: 0.0,
    }];
    for m in 1..=m_max {
        let (next, lp) = step_conditioned(&state, prop)?;
        state = next;
        log_p += lp;
        points.push(ProtocolPoint {
            m,
            expected_iz: expected_iz(&state),
            log10_p_m: log_p / std::f64::consts::LN_10,
        });
    }
    Ok(ProtocolRecord {
        model: model.into(),
        k: u64::from(rho.k()) + (2.0 * rho.frozen_offset()).round() as u64,
        frozen_offset: rho.frozen_offset(),
        points,
        fingerprint: None,
    })
}

/// `⟨I_z⟩_M` and `log₁₀ P_M` for `M = 0..=m_max` under `M` successive
/// successful measurements.
pub fn run_conditioned<T: Real>(
    rho: &BlockedDensity<T>,
    prop: &ConditionedPropagator<T>,
    m_max: u64,
) -> Result<ProtocolRecord> {
    if m_max == 0 {
        return domain("M_max must be at least 1");
    }
    check_compatible(rho, prop)?;
    record_from("exact", rho, prop, m_max)
}

/// As [`run_conditioned`] for a state with a frozen polarized subset; the
/// propagator acts on the residual spins only.
pub fn run_uneven<T: Real>(
    rho: &BlockedDensity<T>,
    prop_residual: &ConditionedPropagator<T>,
    m_max: u64,
) -> Result<ProtocolRecord> {
    if m_max == 0 {
        return domain("M_max must be at least 1");
    }
    check_compatible(rho, prop_residual)?;
    record_from("exact-uneven", rho, prop_residual, m_max)
}

/// `(⟨I_z⟩_M, ln P_M)` for the even polarized state, summing
/// `c(I_z,a)/d_{I_z} · Tr[V^M V^M†]` over sectors with explicit matrix powers.
pub fn even_state_closed_form<T: Real>(
    k: u32,
    a: f64,
    prop: &ConditionedPropagator<T>,
    m: u64,
) -> Result<(f64, f64)> {
    if prop.k() != k {
        return domain("propagator does not match K");
    }
    let mut terms = Vec::new();
    for s in sectors(k) {
        let lc = weight_c(s.two_iz(), a, k)?;
        if lc == f64::NEG_INFINITY {
            continue;
        }
        let v = &prop.block(s).expect("all sectors present").v;
        let d = v.nrows();
        let mut power = CMat::<T>::identity(d, d);
        for _ in 0..m {
            power = &power * v;
        }
        let tr = trace_re(&(&power * power.adjoint()));
        if tr > 0.0 {
            terms.push((lc - (d as f64).ln() + tr.ln(), s.iz()));
        }
    }
    let log_p = log_sum_exp(terms.iter().map(|t| t.0));
    let iz = terms.iter().map(|&(l, iz)| (l - log_p).exp() * iz).sum();
    Ok((iz, log_p))
}

/// What happens to the nuclear state after a spin-down outcome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Keep the post-measurement nuclear state `WρW†/(1 − P)`.
    #[default]
    Carry,
    /// Return to the initial nuclear state.
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPolicy {
    pub max_attempts: u64,
    pub target_streak: u64,
    pub on_failure: FailurePolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Up,
    Down,
}

/// State after one measurement attempt.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub attempt: u64,
    pub outcome: Outcome,
    /// Successful measurements in a row, including this one.
    pub streak: u64,
    #[serde(rename = "expected_Iz")]
    pub expected_iz: f64,
    /// `log₁₀` of the probability of the current streak given its start.
    pub log10_p_streak: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreakSummary {
    pub length: u64,
    #[serde(rename = "start_expected_Iz")]
    pub start_expected_iz: f64,
    #[serde(rename = "end_expected_Iz")]
    pub end_expected_iz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub policy: TrajectoryPolicy,
    #[serde(rename = "initial_expected_Iz")]
    pub initial_expected_iz: f64,
    pub steps: Vec<TrajectoryStep>,
    pub restarts: u64,
    /// Maximal runs of spin-up outcomes, in order; the last one may be cut
    /// off by `max_attempts`.
    pub streaks: Vec<StreakSummary>,
    #[serde(rename = "final_expected_Iz")]
    pub final_expected_iz: f64,
    pub reached_target: bool,
    /// Spin-down outcomes update the nuclei with the complementary Kraus
    /// operator rather than being discarded.
    pub down_branch_kraus: bool,
}

impl TrajectoryRecord {
    pub fn outcomes(&self) -> impl Iterator<Item = Outcome> + '_ {
        self.steps.iter().map(|s| s.outcome)
    }

    /// CSV rows `M, expected_Iz, log10_P_M` with `M` the running streak.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let _ = writeln!(out, "0,{},0", self.initial_expected_iz);
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{}", s.streak, s.expected_iz, s.log10_p_streak);
        }
        out
    }
}

fn renormalized<T: Real>(
    k: u32,
    entries: Vec<DensityBlock<T>>,
    offset: f64,
) -> Result<BlockedDensity<T>> {
    BlockedDensity::new(k, entries, offset)
}

/// Samples measurement outcomes with the inject–measure–restart loop.
///
/// A spin-up outcome applies `V`; a spin-down outcome applies the
/// complementary `W` (nuclear `I_z` rises by one), the electron is discarded
/// and a fresh spin-up electron restarts the streak.
pub fn run_trajectory<T: Real>(
    rho: &BlockedDensity<T>,
    prop: &ConditionedPropagator<T>,
    seed: u64,
    policy: TrajectoryPolicy,
) -> Result<TrajectoryRecord> {
    check_compatible(rho, prop)?;
    if !prop.has_kraus_partner() {
        return domain("trajectories need the down-outcome Kraus operator");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_iz = expected_iz(rho);
    let mut state = rho.clone();
    let mut steps = Vec::new();
    let mut streaks = Vec::new();
    let mut streak = 0u64;
    let mut streak_log_p = 0.0;
    let mut streak_start = initial_iz;
    let mut restarts = 0u64;
    let mut reached_target = policy.target_streak == 0;

    let mut attempt = 0u64;
    while attempt < policy.max_attempts && !reached_target {
        attempt += 1;
        let (up_entries, log_up) = apply_kraus(&state, prop, false)?;
        let (down_entries, log_down) = apply_kraus(&state, prop, true)?;
        let p_up = log_up.exp();
        let p_down = log_down.exp();
        if !(p_up + p_down > 1e-12) || (p_up + p_down - 1.0).abs() > 1e-6 {
            return Err(Error::Inconsistent(format!(
                "branch probabilities {p_up:e} + {p_down:e} do not sum to one"
            )));
        }
        let outcome = if rng.gen::<f64>() < p_up {
            Outcome::Up
        } else {
            Outcome::Down
        };
        match outcome {
            Outcome::Up => {
                state = renormalized(state.k(), up_entries, state.frozen_offset())?;
                streak += 1;
                streak_log_p += log_up;
                if streak >= policy.target_streak {
                    reached_target = true;
                }
            }
            Outcome::Down => {
                let end = steps
                    .last()
                    .map_or(initial_iz, |s: &TrajectoryStep| s.expected_iz);
                streaks.push(StreakSummary {
                    length: streak,
                    start_expected_iz: streak_start,
                    end_expected_iz: end,
                });
                state = match policy.on_failure {
                    FailurePolicy::Carry => {
                        renormalized(state.k(), down_entries, state.frozen_offset())?
                    }
                    FailurePolicy::Reset => rho.clone(),
                };
                restarts += 1;
                streak = 0;
                streak_log_p = 0.0;
                streak_start = expected_iz(&state);
            }
        }
        steps.push(TrajectoryStep {
            attempt,
            outcome,
            streak,
            expected_iz: expected_iz(&state),
            log10_p_streak: streak_log_p / std::f64::consts::LN_10,
        });
    }
    let final_iz = expected_iz(&state);
    if streak > 0 || streaks.is_empty() {
        streaks.push(StreakSummary {
            length: streak,
            start_expected_iz: streak_start,
            end_expected_iz: final_iz,
        });
    }
    Ok(TrajectoryRecord {
        seed,
        policy,
        initial_expected_iz: initial_iz,
        steps,
        restarts,
        streaks,
        final_expected_iz: final_iz,
        reached_target,
        down_branch_kraus: true,
    })
}

/// How fast the all-up probability decays along a record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    /// Interpolated `M` at which `P_M` first reaches `0.1`.
    #[serde(rename = "M_at_P_0_1")]
    pub m_at_p_0_1: Option<f64>,
    /// `d ln P_M / dM` over the first step.
    pub initial_slope: f64,
    /// `d ln P_M / dM` over the last step.
    pub asymptotic_slope: f64,
}

pub fn expected_success_decay(record: &ProtocolRecord) -> Result<DecaySummary> {
    let pts = &record.points;
    if pts.len() < 2 {
        return domain("decay summary needs at least two points");
    }
    let slope = |a: &ProtocolPoint, b: &ProtocolPoint| {
        (b.log10_p_m - a.log10_p_m) * std::f64::consts::LN_10 / (b.m - a.m) as f64
    };
    let m_at = pts
        .windows(2)
        .find(|w| w[0].log10_p_m > -1.0 && w[1].log10_p_m <= -1.0)
        .map(|w| {
            let (x0, x1) = (w[0].m as f64, w[1].m as f64);
            let (y0, y1) = (w[0].log10_p_m, w[1].log10_p_m);
            x0 + (-1.0 - y0) * (x1 - x0) / (y1 - y0)
        });
    let n = pts.len();
    Ok(DecaySummary {
        m_at_p_0_1: m_at,
        initial_slope: slope(&pts[0], &pts[1]),
        asymptotic_slope: slope(&pts[n - 2], &pts[n - 1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{HNucSpec, SystemParams};
    use crate::propagator::conditioned_blocks;
    use crate::spinspace::SectorIndex;
    use crate::states::even_polarized;

    fn pair_prop() -> ConditionedPropagator<f64> {
        let s5 = 5f64.sqrt();
        let p = SystemParams::new(4.0 * s5, vec![2.0 / s5, 1.0 / s5])
            .unwrap()
            .with_hnuc(HNucSpec::uniform_dipolar(2, 0.2))
            .unwrap();
        conditioned_blocks(&p, 1.0).unwrap()
    }

    #[test]
    fn polarized_state_is_stationary() {
        let prop = pair_prop();
        let rho = BlockedDensity::fully_polarized(2);
        let (next, lp) = step_conditioned(&rho, &prop).unwrap();
        assert!(lp.abs() < 1e-14);
        assert_eq!(expected_iz(&next), 1.0);
    }

    #[test]
    fn single_spin_success_probability() {
        let (a, tau) = (1.7f64, 0.6);
        let p = SystemParams::flip_flop(a, vec![1.0]).unwrap();
        let prop = conditioned_blocks(&p, tau).unwrap();
        let down = BlockedDensity::new(
            1,
            vec![DensityBlock {
                sector: SectorIndex::new(1, -1).unwrap(),
                log_weight: 0.0,
                block: CMat::identity(1, 1),
            }],
            0.0,
        )
        .unwrap();
        let (_, lp) = step_conditioned(&down, &prop).unwrap();
        assert!((lp.exp() - (a * tau / 2.0).cos().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn identity_propagator_keeps_series_constant() {
        let prop = ConditionedPropagator::<f64>::identity(2).unwrap();
        let rho = even_polarized(2, 0.8).unwrap();
        let rec = run_conditioned(&rho, &prop, 5).unwrap();
        assert!(rec
            .points
            .iter()
            .all(|p| (p.expected_iz - 0.6).abs() < 1e-14 && p.log10_p_m.abs() < 1e-14));
        assert_eq!(expected_success_decay(&rec).unwrap().m_at_p_0_1, None);
    }

    #[test]
    fn stepping_matches_closed_form() {
        let prop = pair_prop();
        let rho = even_polarized(2, 0.5).unwrap();
        let rec = run_conditioned(&rho, &prop, 30).unwrap();
        for p in &rec.points {
            let (iz, lp) = even_state_closed_form(2, 0.5, &prop, p.m).unwrap();
            assert!((iz - p.expected_iz).abs() < 1e-10);
            assert!((lp / std::f64::consts::LN_10 - p.log10_p_m).abs() < 1e-10);
        }
        assert_eq!(rec.points[0].expected_iz, 0.0);
        assert!(run_conditioned(&rho, &prop, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let prop = ConditionedPropagator::<f64>::identity(2).unwrap();
        let rec = run_conditioned(&even_polarized(2, 0.5).unwrap(), &prop, 2).unwrap();
        let csv = rec.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "M,expected_Iz,log10_P_M");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,0,0");
    }

    #[test]
    fn trajectory_from_polarized_state() {
        let prop = pair_prop();
        let policy = TrajectoryPolicy {
            max_attempts: 100,
            target_streak: 7,
            on_failure: FailurePolicy::Carry,
        };
        let t = run_trajectory(&BlockedDensity::fully_polarized(2), &prop, 3, policy).unwrap();
        assert!(t.reached_target);
        assert_eq!(t.steps.len(), 7);
        assert!(t.outcomes().all(|o| o == Outcome::Up));
        assert_eq!(t.restarts, 0);
    }

    #[test]
    fn trajectory_is_deterministic_and_consistent() {
        let prop = pair_prop();
        let rho = even_polarized(2, 0.5).unwrap();
        let policy = TrajectoryPolicy {
            max_attempts: 200,
            target_streak: 20,
            on_failure: FailurePolicy::Carry,
        };
        let a = run_trajectory(&rho, &prop, 42, policy).unwrap();
        let b = run_trajectory(&rho, &prop, 42, policy).unwrap();
        assert_eq!(a, b);
        let downs = a.outcomes().filter(|&o| o == Outcome::Down).count() as u64;
        assert_eq!(downs, a.restarts);
        let ups = a.outcomes().filter(|&o| o == Outcome::Up).count() as u64;
        assert_eq!(a.streaks.iter().map(|s| s.length).sum::<u64>(), ups);

        let reset = TrajectoryPolicy {
            on_failure: FailurePolicy::Reset,
            ..policy
        };
        let r = run_trajectory(&rho, &prop, 42, reset).unwrap();
        for s in r.steps.iter().filter(|s| s.outcome == Outcome::Down) {
            assert_eq!(s.expected_iz, 0.0);
            assert_eq!(s.streak, 0);
        }
    }
}

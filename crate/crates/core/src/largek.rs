//! Large-`K` diagonal-average model and bosonized-mode helpers.
//!
//! Every non-polarized eigenvalue of `V(τ)` is replaced by a common modulus
//! `V̄ < 1` while the fully polarized block keeps modulus one. The sums over
//! all `K + 1` sectors are done exactly in log space.

use crate::error::{domain, Result};
use crate::hamiltonian::{mode_lowering, ModeMatrix, SystemParams};
use crate::protocol::{ProtocolPoint, ProtocolRecord};
use crate::scalar::{max_abs, CMat, Real};
use crate::spinspace::{enumerate_sector, ln_binomial_pmf, SectorIndex};
use crate::states::log_sum_exp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagonalModelParams {
    pub k: u32,
    pub a: f64,
    pub vbar: f64,
}

impl DiagonalModelParams {
    pub fn new(k: u32, a: f64, vbar: f64) -> Result<Self> {
        if k == 0 {
            return domain("diagonal model needs at least one nucleus");
        }
        if !(0.0..=1.0).contains(&a) {
            return domain(format!("polarization fraction a = {a} outside [0, 1]"));
        }
        if !(vbar > 0.0 && vbar < 1.0) {
            return domain(format!("average modulus V̄ = {vbar} outside (0, 1)"));
        }
        Ok(Self { k, a, vbar })
    }

    /// Modulus of the fully polarized block.
    pub fn v_top(&self) -> f64 {
        1.0
    }
}

/// Sector log-weights cached for repeated evaluation at different `M`.
#[derive(Clone, Debug)]
pub struct DiagonalModel {
    params: DiagonalModelParams,
    /// `ln c(I_z, a)` indexed by the number of up spins.
    log_c: Vec<f64>,
}

impl DiagonalModel {
    pub fn new(params: DiagonalModelParams) -> Self {
        let k = u64::from(params.k);
        let log_c = (0..=k).map(|n| ln_binomial_pmf(k, n, params.a)).collect();
        Self { params, log_c }
    }

    pub fn params(&self) -> DiagonalModelParams {
        self.params
    }

    /// `(⟨I_z⟩_M, ln P_M)`.
    pub fn expectation(&self, m: u64) -> (f64, f64) {
        let k = self.params.k as usize;
        let decay = 2.0 * m as f64 * self.params.vbar.ln();
        let lw = |n: usize| {
            if n == k {
                self.log_c[n]
            } else {
                self.log_c[n] + decay
            }
        };
        let log_p = log_sum_exp((0..=k).map(lw));
        let half_k = k as f64 / 2.0;
        let iz = (0..=k)
            .map(|n| {
                let w = lw(n) - log_p;
                if w == f64::NEG_INFINITY {
                    0.0
                } else {
                    w.exp() * (n as f64 - half_k)
                }
            })
            .sum();
        (iz, log_p)
    }

    /// Smallest `M` with `offset + ⟨I_z⟩_M ≥ target`.
    fn solve(&self, offset: f64, target: f64) -> Result<u64> {
        let reached = |m: u64| offset + self.expectation(m).0 >= target;
        if reached(0) {
            return Ok(0);
        }
        if self.log_c[self.params.k as usize] == f64::NEG_INFINITY {
            return domain("the fully polarized sector carries no weight; polarization never reaches the target");
        }
        let mut hi = 1u64;
        while !reached(hi) {
            if hi >= 1 << 60 {
                return domain("required M exceeds 2^60");
            }
            hi *= 2;
        }
        let mut lo = hi / 2;
        // !reached(lo), reached(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if reached(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    pub fn record(&self, m_max: u64, offset: f64, k_total: u64, model: &str) -> ProtocolRecord {
        let points = (0..=m_max)
            .map(|m| {
                let (iz, lp) = self.expectation(m);
                ProtocolPoint {
                    m,
                    expected_iz: offset + iz,
                    log10_p_m: lp / std::f64::consts::LN_10,
                }
            })
            .collect();
        ProtocolRecord {
            model: model.into(),
            k: k_total,
            frozen_offset: offset,
            points,
            fingerprint: None,
        }
    }
}

pub fn diagonal_expectation(params: DiagonalModelParams, m: u64) -> (f64, f64) {
    DiagonalModel::new(params).expectation(m)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return domain(format!("polarization threshold θ = {theta} outside (0, 1)"));
    }
    Ok(())
}

/// Smallest `M` with `⟨I_z⟩_M ≥ θ·K/2` for the even polarized state.
pub fn required_m(params: DiagonalModelParams, theta: f64) -> Result<u64> {
    check_theta(theta)?;
    DiagonalModel::new(params).solve(0.0, theta * f64::from(params.k) / 2.0)
}

/// Residual thermal spins of the uneven state and the frozen `I_z` offset.
pub fn uneven_split(params: DiagonalModelParams) -> Result<(u32, f64)> {
    let frozen = params.a * f64::from(params.k);
    if (frozen - frozen.round()).abs() > 1e-9 {
        return domain(format!("aK = {frozen} is not an integer number of spins"));
    }
    let frozen = frozen.round() as u32;
    Ok((params.k - frozen, f64::from(frozen) / 2.0))
}

/// As [`required_m`] for the uneven state: a fraction `a` of the nuclei fully
/// polarized and frozen, the rest thermal (`a = 1/2`) and subject to the model.
pub fn required_m_uneven(params: DiagonalModelParams, theta: f64) -> Result<u64> {
    check_theta(theta)?;
    let (residual, offset) = uneven_split(params)?;
    if residual == 0 {
        return Ok(0);
    }
    let model = DiagonalModel::new(DiagonalModelParams::new(residual, 0.5, params.vbar)?);
    model.solve(offset, theta * f64::from(params.k) / 2.0)
}

/// `⟨I_z⟩_M` series of the diagonal model, even initial state.
pub fn diagonal_record(params: DiagonalModelParams, m_max: u64) -> ProtocolRecord {
    DiagonalModel::new(params).record(m_max, 0.0, u64::from(params.k), "diagonal-average")
}

/// `⟨I_z⟩_M` series of the diagonal model, uneven initial state.
pub fn diagonal_record_uneven(params: DiagonalModelParams, m_max: u64) -> Result<ProtocolRecord> {
    let (residual, offset) = uneven_split(params)?;
    if residual == 0 {
        let points = (0..=m_max)
            .map(|m| ProtocolPoint {
                m,
                expected_iz: offset,
                log10_p_m: 0.0,
            })
            .collect();
        return Ok(ProtocolRecord {
            model: "diagonal-average-uneven".into(),
            k: u64::from(params.k),
            frozen_offset: offset,
            points,
            fingerprint: None,
        });
    }
    let model = DiagonalModel::new(DiagonalModelParams::new(residual, 0.5, params.vbar)?);
    Ok(model.record(
        m_max,
        offset,
        u64::from(params.k),
        "diagonal-average-uneven",
    ))
}

/// `cos(c·𝒜τ√n₀)`: eigenvalue of the bosonized flip-flop propagator for
/// `n₀` quanta in the collective mode.
pub fn bosonic_eigenvalue(n0: u64, hyperfine_a: f64, tau: f64, cosine_constant: f64) -> f64 {
    (cosine_constant * hyperfine_a * tau * (n0 as f64).sqrt()).cos()
}

/// Largest deviation of `[A_{k+}, A_{k'−}]` from `δ_{kk'}` on one sector,
/// over all mode pairs. Zero means the collective modes are exactly bosonic
/// there.
pub fn boson_commutator_residual<T: Real>(
    params: &SystemParams<T>,
    sector: SectorIndex,
) -> Result<f64> {
    if sector.k() != params.k() {
        return domain("sector does not match the parameter set");
    }
    let modes = ModeMatrix::completing(params.alphas())?;
    let k = params.k() as usize;
    let basis = enumerate_sector(sector)?;
    let d = basis.len();
    let lower = sector.lowered().map(enumerate_sector).transpose()?;
    let raise = sector.raised().map(enumerate_sector).transpose()?;
    // A_{k−}: S → S−1 and A_{k−}: S+1 → S for every mode
    let down_from_here: Vec<Option<CMat<T>>> = (0..k)
        .map(|m| {
            lower
                .as_ref()
                .map(|l| mode_lowering(&modes, m, &basis, l))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let down_into_here: Vec<Option<CMat<T>>> = (0..k)
        .map(|m| {
            raise
                .as_ref()
                .map(|r| mode_lowering(&modes, m, r, &basis))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let mut worst = T::zero();
    for kk in 0..k {
        for kp in 0..k {
            let mut comm = if kk == kp {
                -CMat::<T>::identity(d, d)
            } else {
                CMat::zeros(d, d)
            };
            if let (Some(a), Some(b)) = (&down_from_here[kk], &down_from_here[kp]) {
                comm += a.adjoint() * b;
            }
            if let (Some(a), Some(b)) = (&down_into_here[kk], &down_into_here[kp]) {
                comm -= b * a.adjoint();
            }
            worst = worst.max(max_abs(&comm));
        }
    }
    Ok(worst.to_f64_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_params() -> DiagonalModelParams {
        DiagonalModelParams::new(1000, 0.8, 0.9).unwrap()
    }

    #[test]
    fn initial_point() {
        for &(k, a) in &[(10u32, 0.7), (1000, 0.8), (4, 0.5)] {
            let (iz, lp) = diagonal_expectation(DiagonalModelParams::new(k, a, 0.9).unwrap(), 0);
            assert!((iz - f64::from(k) * (a - 0.5)).abs() < 1e-9 * f64::from(k));
            assert!(lp.abs() < 1e-12);
        }
    }

    #[test]
    fn long_time_limit_is_full_polarization() {
        let model = DiagonalModel::new(paper_params());
        let (iz, lp) = model.expectation(1_000_000);
        assert_eq!(iz, 500.0);
        assert!((lp - 1000.0 * 0.8f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn success_probability_at_eleven() {
        let (_, lp) = diagonal_expectation(paper_params(), 11);
        assert!((lp / std::f64::consts::LN_10 + 1.0).abs() < 0.05);
    }

    #[test]
    fn required_m_edges() {
        assert_eq!(
            required_m(DiagonalModelParams::new(100, 1.0, 0.9).unwrap(), 0.999).unwrap(),
            0
        );
        assert_eq!(
            required_m(DiagonalModelParams::new(100, 0.8, 1e-300).unwrap(), 0.999).unwrap(),
            1
        );
        assert!(required_m(DiagonalModelParams::new(100, 0.0, 0.9).unwrap(), 0.999).is_err());
        assert!(required_m(paper_params(), 1.0).is_err());
        assert_eq!(
            required_m_uneven(DiagonalModelParams::new(100, 1.0, 0.9).unwrap(), 0.999).unwrap(),
            0
        );
        assert!(required_m_uneven(DiagonalModelParams::new(10, 0.75, 0.9).unwrap(), 0.9).is_err());
    }

    #[test]
    fn required_m_is_minimal() {
        let p = DiagonalModelParams::new(300, 0.7, 0.8).unwrap();
        let m = required_m(p, 0.99).unwrap();
        let model = DiagonalModel::new(p);
        assert!(model.expectation(m).0 >= 0.99 * 150.0);
        assert!(model.expectation(m - 1).0 < 0.99 * 150.0);
    }

    #[test]
    fn uneven_needs_fewer_measurements() {
        let even = required_m(paper_params(), 0.999).unwrap();
        let uneven = required_m_uneven(paper_params(), 0.999).unwrap();
        assert!(uneven < even);
    }

    #[test]
    fn bosonic_eigenvalues() {
        assert_eq!(bosonic_eigenvalue(0, 3.0, 2.0, 0.5), 1.0);
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert!(bosonic_eigenvalue(1, 1.0, half_pi / 0.5, 0.5).abs() < 1e-15);
        for n0 in 1..50 {
            assert!(bosonic_eigenvalue(n0, 1.0, 0.9, 0.5).abs() < 1.0);
        }
    }

    #[test]
    fn commutator_residuals() {
        for k in [2u32, 4, 6] {
            let p = SystemParams::homogeneous(1.0f64, k).unwrap();
            assert!(boson_commutator_residual(&p, SectorIndex::top(k)).unwrap() < 1e-14);
            let one_flip = SectorIndex::new(k, i64::from(k) - 2).unwrap();
            let r = boson_commutator_residual(&p, one_flip).unwrap();
            assert!((r - 2.0 / f64::from(k)).abs() < 1e-12, "K={k}: {r}");
            let mid = SectorIndex::new(k, 0).unwrap();
            assert!((boson_commutator_residual(&p, mid).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

//! Initial nuclear density matrices in blocked (direct-sum) form.
//!
//! Weights are stored as natural logarithms. Blocks whose log-weight falls
//! below the floor are dropped so that `K` in the hundreds does not allocate
//! sectors with weights far below `f64` range.

use crate::error::{domain, Error, Result};
use crate::propagator::DEFAULT_DIMENSION_CAP;
use crate::scalar::{CMat, Real};
use crate::spinspace::{
    binomial_exact, ln_binomial, ln_binomial_pmf, sector_dimension, sectors, SectorIndex,
};

/// Default log-weight floor (`exp(−745)` underflows `f64`).
pub const DEFAULT_LOG_WEIGHT_FLOOR: f64 = -745.0;

/// One sector of a blocked density: `exp(log_weight) · block`, `Tr block = 1`.
#[derive(Clone, Debug)]
pub struct DensityBlock<T: Real> {
    pub sector: SectorIndex,
    pub log_weight: f64,
    pub block: CMat<T>,
}

/// `ρ = ⊕ c_{I_z} ρ^{I_z}` over the spins that take part in the dynamics, plus
/// a constant `I_z` contribution from frozen spins.
#[derive(Clone, Debug)]
pub struct BlockedDensity<T: Real> {
    k: u32,
    entries: Vec<DensityBlock<T>>,
    frozen_offset: f64,
}

/// Numerically stable `ln Σ exp(xᵢ)`; `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl<T: Real> BlockedDensity<T> {
    /// Builds a density from entries, dropping zero weights and renormalizing.
    pub fn new(k: u32, entries: Vec<DensityBlock<T>>, frozen_offset: f64) -> Result<Self> {
        let mut entries: Vec<_> = entries
            .into_iter()
            .filter(|e| e.log_weight > f64::NEG_INFINITY)
            .collect();
        let total = log_sum_exp(entries.iter().map(|e| e.log_weight));
        if !total.is_finite() {
            return Err(Error::Inconsistent("density has no weight".into()));
        }
        for e in &mut entries {
            if e.sector.k() != k {
                return domain("density block belongs to a different K");
            }
            e.log_weight -= total;
        }
        entries.sort_by_key(|e| e.sector);
        Ok(Self {
            k,
            entries,
            frozen_offset,
        })
    }

    /// Point mass on the fully polarized state `|𝟘⟩⟨𝟘|`.
    pub fn fully_polarized(k: u32) -> Self {
        Self {
            k,
            entries: vec![DensityBlock {
                sector: SectorIndex::top(k),
                log_weight: 0.0,
                block: CMat::identity(1, 1),
            }],
            frozen_offset: 0.0,
        }
    }

    /// Number of spins in the dynamic part.
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn entries(&self) -> &[DensityBlock<T>] {
        &self.entries
    }

    pub fn frozen_offset(&self) -> f64 {
        self.frozen_offset
    }

    pub fn with_frozen_offset(mut self, offset: f64) -> Self {
        self.frozen_offset = offset;
        self
    }

    pub fn entry(&self, sector: SectorIndex) -> Option<&DensityBlock<T>> {
        self.entries.iter().find(|e| e.sector == sector)
    }

    /// `ln Σ weights` (zero for a normalized density).
    pub fn log_total_weight(&self) -> f64 {
        log_sum_exp(self.entries.iter().map(|e| e.log_weight))
    }
}

/// `ln c(I_z, a) = ln[d_{I_z} a^{K/2+I_z} (1−a)^{K/2−I_z}]`; `−∞` for zero weight.
pub fn weight_c(two_iz: i64, a: f64, k: u32) -> Result<f64> {
    let s = SectorIndex::new(k, two_iz)?;
    if !(0.0..=1.0).contains(&a) {
        return domain(format!("polarization fraction a = {a} outside [0, 1]"));
    }
    Ok(ln_binomial_pmf(u64::from(k), u64::from(s.n_up()), a))
}

/// Each of `K` nuclei independently up with probability `a`; blocks are
/// maximally mixed within each sector.
pub fn even_polarized<T: Real>(k: u32, a: f64) -> Result<BlockedDensity<T>> {
    even_polarized_with(k, a, DEFAULT_LOG_WEIGHT_FLOOR, DEFAULT_DIMENSION_CAP)
}

pub fn even_polarized_with<T: Real>(
    k: u32,
    a: f64,
    floor: f64,
    cap: usize,
) -> Result<BlockedDensity<T>> {
    if k % 2 == 1 {
        return domain(format!(
            "even polarized states assume an even number of nuclei (K even, I = 1/2); got K = {k}"
        ));
    }
    let mut entries = Vec::new();
    for s in sectors(k) {
        let lw = weight_c(s.two_iz(), a, k)?;
        if lw < floor {
            continue;
        }
        let d = sector_dimension(k, s.two_iz())?
            .exact
            .filter(|&d| d as usize <= cap)
            .ok_or(Error::CapExceeded {
                dim: binomial_exact(u64::from(k), u64::from(s.n_up()))
                    .map_or(usize::MAX, |d| d as usize),
                cap,
            })? as usize;
        let inv = T::one() / T::from_usize(d).unwrap();
        entries.push(DensityBlock {
            sector: s,
            log_weight: lw,
            block: CMat::from_diagonal_element(d, d, crate::scalar::c(inv)),
        });
    }
    BlockedDensity::new(k, entries, 0.0)
}

/// Splits the nuclei into a fully polarized fraction `a` (frozen, contributing
/// `aK/2` to `⟨I_z⟩`) and a thermal remainder of `(1−a)K` spins. Couplings
/// for the dynamics live on the remainder only.
pub fn uneven_polarized<T: Real>(k: u32, a: f64) -> Result<BlockedDensity<T>> {
    if !(0.0..=1.0).contains(&a) {
        return domain(format!("polarization fraction a = {a} outside [0, 1]"));
    }
    let frozen = a * f64::from(k);
    if (frozen - frozen.round()).abs() > 1e-9 {
        return domain(format!("aK = {frozen} is not an integer number of spins"));
    }
    let frozen = frozen.round() as u32;
    let residual = k - frozen;
    if residual % 2 == 1 {
        return domain(format!(
            "residual thermal spin count (1−a)K = {residual} must be even"
        ));
    }
    Ok(even_polarized::<T>(residual, 0.5)?.with_frozen_offset(f64::from(frozen) / 2.0))
}

/// `ln R` with `R = c(0, a)/c(K/2, a) = C(K, K/2)·((1−a)/a)^{K/2}`.
pub fn ln_ratio_r(k: u32, a: f64) -> Result<f64> {
    if k % 2 == 1 {
        return domain(format!("ratio R needs K even, got {k}"));
    }
    if !(a > 0.0 && a < 1.0) {
        return domain(format!("ratio R needs 0 < a < 1, got {a}"));
    }
    let half = u64::from(k / 2);
    Ok(ln_binomial(u64::from(k), half) + half as f64 * ((1.0 - a) / a).ln())
}

/// Weight of the `I_z = 0` sector relative to the fully polarized state.
pub fn ratio_r(k: u32, a: f64) -> Result<f64> {
    ln_ratio_r(k, a).map(f64::exp)
}

/// `⟨I_z⟩`; blocks are `I_z`-homogeneous so only weights enter.
pub fn expected_iz<T: Real>(rho: &BlockedDensity<T>) -> f64 {
    let total = rho.log_total_weight();
    rho.frozen_offset
        + rho
            .entries
            .iter()
            .map(|e| (e.log_weight - total).exp() * e.sector.iz())
            .sum::<f64>()
}

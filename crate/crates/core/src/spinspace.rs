//! Nuclear spin-1/2 basis states organized into total-`I_z` sectors.
//!
//! A configuration of `K` nuclei is a bit word: bit `i` set means nucleus `i`
//! has `m = +1/2`. Sector bases list their configurations in ascending word
//! order, which fixes the row/column order of every sector matrix built on
//! top of them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Largest `K` for which dimensions are also carried as exact integers.
pub const EXACT_COUNT_MAX_K: u32 = 60;

/// Largest `K` a [`SpinConfiguration`] word can hold.
pub const MAX_ENUMERABLE_K: u32 = 63;

/// Total nuclear `I_z` sector, stored as `2·I_z` so that half-integers stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SectorIndex {
    k: u32,
    two_iz: i64,
}

impl SectorIndex {
    pub fn new(k: u32, two_iz: i64) -> Result<Self> {
        let kk = i64::from(k);
        if two_iz.abs() > kk {
            return domain(format!("|2·I_z| = {} exceeds K = {k}", two_iz.abs()));
        }
        if (two_iz - kk).rem_euclid(2) != 0 {
            return domain(format!("2·I_z = {two_iz} and K = {k} differ in parity"));
        }
        Ok(Self { k, two_iz })
    }

    /// The fully polarized sector `I_z = K/2`.
    pub fn top(k: u32) -> Self {
        Self {
            k,
            two_iz: i64::from(k),
        }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn two_iz(&self) -> i64 {
        self.two_iz
    }

    pub fn iz(&self) -> f64 {
        self.two_iz as f64 / 2.0
    }

    /// Number of nuclei pointing up.
    pub fn n_up(&self) -> u32 {
        ((i64::from(self.k) + self.two_iz) / 2) as u32
    }

    pub fn is_top(&self) -> bool {
        self.two_iz == i64::from(self.k)
    }

    /// Sector one spin flip higher, if it exists.
    pub fn raised(&self) -> Option<Self> {
        Self::new(self.k, self.two_iz + 2).ok()
    }

    /// Sector one spin flip lower, if it exists.
    pub fn lowered(&self) -> Option<Self> {
        Self::new(self.k, self.two_iz - 2).ok()
    }
}

/// All `K + 1` sectors in ascending `I_z`.
pub fn sectors(k: u32) -> impl Iterator<Item = SectorIndex> + Clone {
    let kk = i64::from(k);
    (0..=kk).map(move |n| SectorIndex {
        k,
        two_iz: 2 * n - kk,
    })
}

/// Occupation word of `K` spin-1/2 nuclei.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfiguration(pub u64);

impl SpinConfiguration {
    pub fn is_up(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    /// `m_i = ±1/2` of nucleus `i`.
    pub fn m(self, i: usize) -> f64 {
        if self.is_up(i) {
            0.5
        } else {
            -0.5
        }
    }

    pub fn flipped(self, i: usize) -> Self {
        Self(self.0 ^ (1 << i))
    }

    /// `2·I_z` of this configuration for `k` nuclei.
    pub fn two_iz(self, k: u32) -> i64 {
        2 * i64::from(self.0.count_ones()) - i64::from(k)
    }
}

/// Ordered basis of one `I_z` sector.
#[derive(Clone, Debug)]
pub struct SectorBasis {
    sector: SectorIndex,
    configs: Vec<SpinConfiguration>,
    index: HashMap<SpinConfiguration, usize>,
}

impl SectorBasis {
    pub fn sector(&self) -> SectorIndex {
        self.sector
    }

    pub fn k(&self) -> u32 {
        self.sector.k
    }

    pub fn configs(&self) -> &[SpinConfiguration] {
        &self.configs
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn index_of(&self, cfg: SpinConfiguration) -> Option<usize> {
        self.index.get(&cfg).copied()
    }
}

/// Enumerates the sector basis in ascending occupation-word order.
pub fn enumerate_sector(sector: SectorIndex) -> Result<SectorBasis> {
    let k = sector.k;
    if k > MAX_ENUMERABLE_K {
        return domain(format!(
            "cannot enumerate configurations of K = {k} > {MAX_ENUMERABLE_K} nuclei"
        ));
    }
    let r = sector.n_up();
    let mut configs = Vec::new();
    if r == 0 {
        configs.push(SpinConfiguration(0));
    } else {
        // Gosper's hack: next larger word with the same popcount.
        let limit = 1u64 << k;
        let mut w: u64 = (1u64 << r) - 1;
        while w < limit {
            configs.push(SpinConfiguration(w));
            let lowest = w & w.wrapping_neg();
            let ripple = w + lowest;
            w = (((ripple ^ w) >> 2) / lowest) | ripple;
        }
    }
    let index = configs.iter().enumerate().map(|(j, &c)| (c, j)).collect();
    Ok(SectorBasis {
        sector,
        configs,
        index,
    })
}

/// A dimension carried both exactly (when it fits) and as a natural log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub exact: Option<u64>,
    pub ln: f64,
}

/// `ln C(n, k)` via log-gamma; valid far beyond fixed-width overflow.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    assert!(k <= n, "ln_binomial: k > n");
    if k == 0 || k == n {
        return 0.0;
    }
    let nf = n as f64;
    let kf = k as f64;
    libm::lgamma(nf + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(nf - kf + 1.0)
}

/// `ln n! − [(n + ½) ln n − n + ½ ln 2π]`, the Stirling remainder.
fn stirling_remainder(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        return libm::lgamma(n + 1.0) - (n + 0.5) * n.ln() + n - half_ln_2pi;
    }
    let nn = n * n;
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
}

/// Deviance term `x ln(x/m) + m − x`, accurate when `x ≈ m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let next = s + ej / f64::from(2 * j + 1);
            if next == s {
                break;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln[C(n, k) pᵏ (1−p)^{n−k}]`, accurate to a few ulps of the result even
/// for `n` in the millions (saddle-point form with Stirling remainders).
pub fn ln_binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    assert!(k <= n, "ln_binomial_pmf: k > n");
    let q = 1.0 - p;
    let nf = n as f64;
    let kf = k as f64;
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    if k == 0 {
        return nf * q.ln();
    }
    if k == n {
        return nf * p.ln();
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let lc = stirling_remainder(nf)
        - stirling_remainder(kf)
        - stirling_remainder(nf - kf)
        - deviance(kf, nf * p)
        - deviance(nf - kf, nf * q);
    let lf = two_pi.ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// Exact `C(n, k)` if it fits in a `u64`.
pub fn binomial_exact(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n-i)/(i+1) stays integral at every step
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return None;
        }
    }
    Some(acc as u64)
}

fn dimension(n: u64, k: u64) -> Dimension {
    let exact = if n <= u64::from(EXACT_COUNT_MAX_K) {
        binomial_exact(n, k)
    } else {
        None
    };
    let ln = match exact {
        Some(v) => (v as f64).ln(),
        None => ln_binomial(n, k),
    };
    Dimension { exact, ln }
}

/// `d_{I_z} = C(K, K/2 + I_z)`.
pub fn sector_dimension(k: u32, two_iz: i64) -> Result<Dimension> {
    let s = SectorIndex::new(k, two_iz)?;
    Ok(dimension(u64::from(k), u64::from(s.n_up())))
}

/// `Ω(1/2, N) = C(K + 1, N)`: dimension of the electron+nuclear sector with
/// `N` spins flipped down from the fully polarized state, i.e. `J = J_m − N`.
pub fn omega_count(k: u32, n: u32) -> Result<Dimension> {
    if n > k + 1 {
        return domain(format!("N = {n} outside 0..={}", k + 1));
    }
    Ok(dimension(u64::from(k) + 1, u64::from(n)))
}

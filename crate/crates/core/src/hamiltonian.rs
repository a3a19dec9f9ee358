//! Conserved-`J_z` sector Hamiltonians of one electron spin coupled to `K`
//! spin-1/2 nuclei.
//!
//! Ladder convention: `S₋|↑⟩ = |↓⟩` and `I₋|+½⟩ = |−½⟩` with unit matrix
//! elements, so a single flip-flop matrix element is `𝒜αᵢ/2` under
//! [`CouplingConvention::SpinLadder`].

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::{c, hermiticity_defect, max_abs, CMat, Real, C};
use crate::spinspace::{enumerate_sector, SectorBasis, SectorIndex, SpinConfiguration};

/// Tolerance on `Σ αᵢ² = 1`.
pub const ALPHA_NORM_TOL: f64 = 1e-12;

/// Relative Hermiticity tolerance for assembled and user-provided matrices.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Normalization of the hyperfine operators.
///
/// `SpinLadder` uses unit ladder matrix elements, giving the flip-flop-only
/// conditioned propagator `cos(𝒜τ√h/2)`. `HalvedCoupling` halves every
/// hyperfine matrix element, which is the normalization under which the
/// flip-flop closed form reads `cos(𝒜τ√h/4)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingConvention {
    #[default]
    SpinLadder,
    HalvedCoupling,
}

impl CouplingConvention {
    /// Factor multiplying `𝒜` in every hyperfine matrix element.
    pub fn hyperfine_scale(self) -> f64 {
        match self {
            Self::SpinLadder => 1.0,
            Self::HalvedCoupling => 0.5,
        }
    }

    /// Constant `c` in `V = cos(c·𝒜τ√h)`.
    pub fn cosine_constant(self) -> f64 {
        0.5 * self.hyperfine_scale()
    }
}

/// Provider of a Hermitian nuclear Hamiltonian restricted to one sector.
pub type HNucProvider<T> = Arc<dyn Fn(&SectorBasis) -> Result<CMat<T>> + Send + Sync>;

/// Nuclear–nuclear interaction preserving total `I_z`.
#[derive(Clone)]
pub enum HNucSpec<T: Real> {
    None,
    /// `Σ_{i<j} b_ij (I_zⁱI_zʲ − ¼(I₊ⁱI₋ʲ + I₋ⁱI₊ʲ))` with a symmetric,
    /// zero-diagonal coupling matrix `b`.
    SecularDipolar(DMatrix<T>),
    Custom(HNucProvider<T>),
}

impl<T: Real> fmt::Debug for HNucSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "None"),
            Self::SecularDipolar(b) => f.debug_tuple("SecularDipolar").field(b).finish(),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl<T: Real> HNucSpec<T> {
    /// Uniform dipolar coupling `b` between every pair of `k` nuclei.
    pub fn uniform_dipolar(k: usize, b: T) -> Self {
        let mut m = DMatrix::from_element(k, k, b);
        m.fill_diagonal(T::zero());
        Self::SecularDipolar(m)
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    fn validate(&self, k: usize) -> Result<()> {
        if let Self::SecularDipolar(b) = self {
            if b.shape() != (k, k) {
                return domain(format!(
                    "dipolar matrix is {:?}, expected {k}×{k}",
                    b.shape()
                ));
            }
            let tol = T::lit(1e-12);
            for i in 0..k {
                if b[(i, i)].abs() > tol {
                    return domain(format!("dipolar matrix has nonzero diagonal entry at {i}"));
                }
                for j in 0..i {
                    if !b[(i, j)].is_finite() || (b[(i, j)] - b[(j, i)]).abs() > tol {
                        return domain(format!("dipolar matrix not symmetric at ({i},{j})"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Physical parameters. All energies share one unit (with `ħ = 1`); the CLI
/// feeds them as products with the measurement interval `τ`.
#[derive(Clone, Debug)]
pub struct SystemParams<T: Real> {
    k: u32,
    hyperfine_a: T,
    alphas: Vec<T>,
    electron_zeeman: T,
    nuclear_zeeman: T,
    overhauser: bool,
    convention: CouplingConvention,
    hnuc: HNucSpec<T>,
}

impl<T: Real> SystemParams<T> {
    /// Pure hyperfine system: no Zeeman terms and no nuclear interaction.
    pub fn new(hyperfine_a: T, alphas: Vec<T>) -> Result<Self> {
        if alphas.is_empty() {
            return domain("at least one nucleus is required");
        }
        if alphas.len() > 63 {
            return domain(format!(
                "K = {} exceeds the exact engine's 63-spin word",
                alphas.len()
            ));
        }
        if !hyperfine_a.is_finite() || alphas.iter().any(|a| !a.is_finite()) {
            return domain("hyperfine constant and couplings must be finite");
        }
        let norm: f64 = alphas.iter().map(|a| a.to_f64_lossy().powi(2)).sum();
        let tol = ALPHA_NORM_TOL.max(100.0 * T::default_epsilon().to_f64_lossy());
        if (norm - 1.0).abs() > tol {
            return domain(format!("Σαᵢ² = {norm} differs from 1"));
        }
        Ok(Self {
            k: alphas.len() as u32,
            hyperfine_a,
            alphas,
            electron_zeeman: T::zero(),
            nuclear_zeeman: T::zero(),
            overhauser: true,
            convention: CouplingConvention::SpinLadder,
            hnuc: HNucSpec::None,
        })
    }

    /// Homogeneous couplings `αᵢ = 1/√K`.
    pub fn homogeneous(hyperfine_a: T, k: u32) -> Result<Self> {
        let alpha = T::one() / T::from_u32(k).unwrap_or_else(T::one).sqrt();
        Self::new(hyperfine_a, vec![alpha; k as usize])
    }

    /// Flip-flop exchange only: drops the longitudinal `A_zS_z` term, leaving
    /// the `B_eff = 0`, `H_nuc = 0` limit.
    pub fn flip_flop(hyperfine_a: T, alphas: Vec<T>) -> Result<Self> {
        Ok(Self::new(hyperfine_a, alphas)?.with_overhauser(false))
    }

    pub fn with_zeeman(mut self, electron: T, nuclear: T) -> Self {
        self.electron_zeeman = electron;
        self.nuclear_zeeman = nuclear;
        self
    }

    pub fn with_overhauser(mut self, on: bool) -> Self {
        self.overhauser = on;
        self
    }

    pub fn with_convention(mut self, convention: CouplingConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_hnuc(mut self, hnuc: HNucSpec<T>) -> Result<Self> {
        hnuc.validate(self.k as usize)?;
        self.hnuc = hnuc;
        Ok(self)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn hyperfine_a(&self) -> T {
        self.hyperfine_a
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn electron_zeeman(&self) -> T {
        self.electron_zeeman
    }

    pub fn nuclear_zeeman(&self) -> T {
        self.nuclear_zeeman
    }

    pub fn overhauser(&self) -> bool {
        self.overhauser
    }

    pub fn convention(&self) -> CouplingConvention {
        self.convention
    }

    pub fn hnuc(&self) -> &HNucSpec<T> {
        &self.hnuc
    }

    /// `𝒜` times the convention's hyperfine scale.
    pub fn effective_a(&self) -> T {
        self.hyperfine_a * T::lit(self.convention.hyperfine_scale())
    }

    /// All couplings equal (to within `1e-12`).
    pub fn is_homogeneous(&self) -> bool {
        let a0 = self.alphas[0];
        self.alphas.iter().all(|&a| (a - a0).abs() <= T::lit(1e-12))
    }

    /// `A_z = Σ αᵢ mᵢ` on one configuration.
    pub fn a_z(&self, cfg: SpinConfiguration) -> T {
        self.alphas
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &a)| acc + a * T::lit(cfg.m(i)))
    }
}

fn check_ladder(from: &SectorBasis, to: &SectorBasis) -> Result<()> {
    if from.k() != to.k() || to.sector().two_iz() != from.sector().two_iz() - 2 {
        return domain(format!(
            "lowering operator needs I_z(to) = I_z(from) − 1, got 2I_z {} → {}",
            from.sector().two_iz(),
            to.sector().two_iz()
        ));
    }
    Ok(())
}

fn single_flip_lowering<T: Real>(coeffs: &[C<T>], from: &SectorBasis, to: &SectorBasis) -> CMat<T> {
    let mut m = CMat::zeros(to.len(), from.len());
    for (col, &cfg) in from.configs().iter().enumerate() {
        for (i, &a) in coeffs.iter().enumerate() {
            if cfg.is_up(i) {
                let row = to
                    .index_of(cfg.flipped(i))
                    .expect("lowered configuration in target sector");
                m[(row, col)] += a;
            }
        }
    }
    m
}

/// Matrix of `A₋ = Σ αᵢ I₋ⁱ` from `from` to the sector one flip lower.
/// `A₊` is its adjoint.
pub fn collective_lowering<T: Real>(
    alphas: &[T],
    from: &SectorBasis,
    to: &SectorBasis,
) -> Result<CMat<T>> {
    check_ladder(from, to)?;
    if alphas.len() != from.k() as usize {
        return domain(format!("{} couplings for K = {}", alphas.len(), from.k()));
    }
    let coeffs: Vec<C<T>> = alphas.iter().map(|&a| c(a)).collect();
    Ok(single_flip_lowering(&coeffs, from, to))
}

/// Unitary `K×K` change of basis from sites to collective modes. Row `k`
/// holds the coefficients `αᵢᵏ`; row 0 is the collective (hyperfine) mode.
#[derive(Clone, Debug)]
pub struct ModeMatrix<T: Real> {
    rows: CMat<T>,
}

impl<T: Real> ModeMatrix<T> {
    pub fn new(rows: CMat<T>) -> Result<Self> {
        let (n, m) = rows.shape();
        if n != m || n == 0 {
            return domain(format!("mode matrix must be square, got {n}×{m}"));
        }
        let defect = max_abs(&(&rows * rows.adjoint() - CMat::identity(n, n)));
        if defect > T::lit(1e-10) {
            return domain(format!("mode matrix is not unitary (defect {defect:e})"));
        }
        Ok(Self { rows })
    }

    /// Completes `alphas` to a unitary mode matrix. Homogeneous couplings get
    /// plane-wave modes (every `|αᵢᵏ| = 1/√K`); otherwise the remaining rows
    /// are a real Gram–Schmidt completion against the site basis.
    pub fn completing(alphas: &[T]) -> Result<Self> {
        let k = alphas.len();
        let a0 = alphas[0];
        let homogeneous = alphas.iter().all(|&a| (a - a0).abs() <= T::lit(1e-12));
        let mut rows = CMat::zeros(k, k);
        if homogeneous {
            let two_pi = T::two_pi();
            for m in 0..k {
                for i in 0..k {
                    let phase = two_pi * T::from_usize(m * i).unwrap() / T::from_usize(k).unwrap();
                    rows[(m, i)] = Complex::new(a0 * phase.cos(), a0 * phase.sin());
                }
            }
        } else {
            let mut basis: Vec<Vec<T>> = vec![alphas.to_vec()];
            for e in 0..k {
                if basis.len() == k {
                    break;
                }
                let mut v = vec![T::zero(); k];
                v[e] = T::one();
                for b in &basis {
                    let dot = b.iter().zip(&v).fold(T::zero(), |s, (x, y)| s + *x * *y);
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= dot * *bi;
                    }
                }
                let norm = v.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
                if norm > T::lit(1e-6) {
                    basis.push(v.into_iter().map(|x| x / norm).collect());
                }
            }
            for (m, b) in basis.iter().enumerate() {
                for (i, &x) in b.iter().enumerate() {
                    rows[(m, i)] = c(x);
                }
            }
        }
        Self::new(rows)
    }

    pub fn k(&self) -> usize {
        self.rows.nrows()
    }

    pub fn coefficients(&self, mode: usize) -> Vec<C<T>> {
        self.rows.row(mode).iter().copied().collect()
    }
}

/// Matrix of the mode lowering operator `A_{k−} = Σ αᵢᵏ I₋ⁱ`.
pub fn mode_lowering<T: Real>(
    modes: &ModeMatrix<T>,
    mode: usize,
    from: &SectorBasis,
    to: &SectorBasis,
) -> Result<CMat<T>> {
    check_ladder(from, to)?;
    if modes.k() != from.k() as usize || mode >= modes.k() {
        return domain(format!("mode {mode} unavailable for K = {}", from.k()));
    }
    Ok(single_flip_lowering(&modes.coefficients(mode), from, to))
}

/// Nuclear interaction restricted to one sector.
pub fn build_hnuc<T: Real>(spec: &HNucSpec<T>, basis: &SectorBasis) -> Result<CMat<T>> {
    let d = basis.len();
    match spec {
        HNucSpec::None => Ok(CMat::zeros(d, d)),
        HNucSpec::SecularDipolar(b) => {
            let k = basis.k() as usize;
            if b.shape() != (k, k) {
                return domain(format!(
                    "dipolar matrix is {:?}, expected {k}×{k}",
                    b.shape()
                ));
            }
            let quarter = T::lit(0.25);
            let mut m = CMat::zeros(d, d);
            for (col, &cfg) in basis.configs().iter().enumerate() {
                for i in 0..k {
                    for j in (i + 1)..k {
                        let bij = b[(i, j)];
                        if bij == T::zero() {
                            continue;
                        }
                        m[(col, col)] += c(bij * T::lit(cfg.m(i) * cfg.m(j)));
                        if cfg.is_up(i) != cfg.is_up(j) {
                            let row = basis
                                .index_of(cfg.flipped(i).flipped(j))
                                .expect("flip-flop stays in sector");
                            m[(row, col)] -= c(bij * quarter);
                        }
                    }
                }
            }
            Ok(m)
        }
        HNucSpec::Custom(provider) => {
            let m = provider(basis)?;
            if m.shape() != (d, d) {
                return Err(Error::Validation(format!(
                    "custom H_nuc returned {:?} for a sector of dimension {d}",
                    m.shape()
                )));
            }
            let scale = max_abs(&m).max(T::one());
            if hermiticity_defect(&m) > T::lit(HERMITICITY_TOL) * scale {
                return Err(Error::Validation(format!(
                    "custom H_nuc is not Hermitian on sector 2I_z = {}",
                    basis.sector().two_iz()
                )));
            }
            Ok(m)
        }
    }
}

/// Hamiltonian of one conserved-`J_z` sector, electron-up block first.
#[derive(Clone, Debug)]
pub struct SectorHamiltonian<T: Real> {
    pub two_j: i64,
    /// Nuclear basis at `I_z = J − 1/2` paired with the electron up.
    pub up_basis: Option<SectorBasis>,
    /// Nuclear basis at `I_z = J + 1/2` paired with the electron down.
    pub down_basis: Option<SectorBasis>,
    pub matrix: CMat<T>,
}

impl<T: Real> SectorHamiltonian<T> {
    pub fn up_dim(&self) -> usize {
        self.up_basis.as_ref().map_or(0, SectorBasis::len)
    }

    pub fn down_dim(&self) -> usize {
        self.down_basis.as_ref().map_or(0, SectorBasis::len)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Validated `2J` range `[-(K+1), K+1]` with the parity of `K + 1`.
pub fn check_two_j(k: u32, two_j: i64) -> Result<()> {
    let jm2 = i64::from(k) + 1;
    if two_j.abs() > jm2 || (two_j - jm2).rem_euclid(2) != 0 {
        return domain(format!(
            "2J = {two_j} outside the valid range ±{jm2} for K = {k}"
        ));
    }
    Ok(())
}

/// Dimension of the `2J` sector without building it.
pub fn sector_pair_dim(k: u32, two_j: i64) -> usize {
    let d = |two_iz: i64| {
        SectorIndex::new(k, two_iz)
            .ok()
            .and_then(|s| crate::spinspace::binomial_exact(u64::from(k), u64::from(s.n_up())))
            .map_or(0, |v| v as usize)
    };
    d(two_j - 1) + d(two_j + 1)
}

/// Assembles `[[H_up, (𝒜/2)A₋], [(𝒜/2)A₊, H_down]]` for the sector `2J`.
pub fn build_sector_hamiltonian<T: Real>(
    params: &SystemParams<T>,
    two_j: i64,
) -> Result<SectorHamiltonian<T>> {
    let k = params.k;
    check_two_j(k, two_j)?;
    let up_basis = SectorIndex::new(k, two_j - 1)
        .ok()
        .map(enumerate_sector)
        .transpose()?;
    let down_basis = SectorIndex::new(k, two_j + 1)
        .ok()
        .map(enumerate_sector)
        .transpose()?;
    let du = up_basis.as_ref().map_or(0, SectorBasis::len);
    let dd = down_basis.as_ref().map_or(0, SectorBasis::len);

    let half = T::lit(0.5);
    let half_a = params.effective_a() * half;
    let mut h = CMat::zeros(du + dd, du + dd);

    let mut fill_block = |basis: &SectorBasis, offset: usize, s_z: T| -> Result<()> {
        let hn = build_hnuc(&params.hnuc, basis)?;
        h.view_mut((offset, offset), (basis.len(), basis.len()))
            .copy_from(&hn);
        for (j, &cfg) in basis.configs().iter().enumerate() {
            let iz = T::lit(basis.sector().iz());
            let mut e = s_z * params.electron_zeeman + params.nuclear_zeeman * iz;
            if params.overhauser {
                e += params.effective_a() * s_z * params.a_z(cfg);
            }
            h[(offset + j, offset + j)] += c(e);
        }
        Ok(())
    };
    if let Some(b) = &up_basis {
        fill_block(b, 0, half)?;
    }
    if let Some(b) = &down_basis {
        fill_block(b, du, -half)?;
    }
    if let (Some(up), Some(down)) = (&up_basis, &down_basis) {
        let lower = collective_lowering(&params.alphas, down, up)? * c(half_a);
        h.view_mut((0, du), (du, dd)).copy_from(&lower);
        h.view_mut((du, 0), (dd, du)).copy_from(&lower.adjoint());
    }
    Ok(SectorHamiltonian {
        two_j,
        up_basis,
        down_basis,
        matrix: h,
    })
}

/// Electron Zeeman splitting shifted by the nuclear Zeeman and Overhauser
/// fields, `g*μ_B·B_eff = E_z − E_n − 𝒜 Σ αᵢ mᵢ`, per configuration of the sector.
pub fn effective_field<T: Real>(params: &SystemParams<T>, sector: SectorIndex) -> Result<Vec<T>> {
    if sector.k() != params.k {
        return domain(format!(
            "sector for K = {} used with K = {}",
            sector.k(),
            params.k
        ));
    }
    let basis = enumerate_sector(sector)?;
    Ok(basis
        .configs()
        .iter()
        .map(|&cfg| {
            params.electron_zeeman - params.nuclear_zeeman - params.effective_a() * params.a_z(cfg)
        })
        .collect())
}

/// Nuclear-only part `ℋ = (E_n − E_z)I_z + E_z·J + 𝒜A_z(J − I_z) + H_nuc` of the
/// Hamiltonian with the conserved `J_z` replaced by its value, evaluated on
/// any nuclear sector basis.
pub fn nuclear_part<T: Real>(
    params: &SystemParams<T>,
    two_j: i64,
    basis: &SectorBasis,
) -> Result<CMat<T>> {
    let j = T::lit(two_j as f64 / 2.0);
    let iz = T::lit(basis.sector().iz());
    let mut m = build_hnuc(&params.hnuc, basis)?;
    for (idx, &cfg) in basis.configs().iter().enumerate() {
        let mut e =
            (params.nuclear_zeeman - params.electron_zeeman) * iz + params.electron_zeeman * j;
        if params.overhauser {
            e += params.effective_a() * params.a_z(cfg) * (j - iz);
        }
        m[(idx, idx)] += c(e);
    }
    Ok(m)
}

//! Conditioned (post-selected) propagator `V(τ) = ⟨↑|e^{−iHτ}|↑⟩` and its
//! complementary Kraus partner, spectra, and closed-form flip-flop limits.

use nalgebra::{ComplexField, Schur, SymmetricEigen, SVD};
use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hamiltonian::{
    build_sector_hamiltonian, collective_lowering, nuclear_part, sector_pair_dim,
    SectorHamiltonian, SystemParams,
};
use crate::scalar::{c, max_abs, CMat, Real, C};
use crate::spinspace::{enumerate_sector, sectors, SectorBasis, SectorIndex};

/// Largest sector matrix the exact engine will exponentiate.
pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Default threshold on `1 − |v|` for flagging a modulus-one eigenvalue.
pub const DEFAULT_DEGENERACY_THRESHOLD: f64 = 1e-9;

/// Singular values below this (relative to 1) span a numerical kernel.
pub const NULL_THRESHOLD: f64 = 1e-10;

const EIGEN_MAX_ITER: usize = 10_000;

fn eps<T: Real>() -> T {
    T::default_epsilon()
}

/// Hermitian eigendecomposition with real eigenvalues.
pub(crate) fn hermitian_eigen<T: Real>(h: &CMat<T>, sector: i64) -> Result<(Vec<T>, CMat<T>)> {
    if h.nrows() == 0 {
        return Ok((Vec::new(), h.clone()));
    }
    let eig = SymmetricEigen::try_new(h.clone(), eps::<T>(), EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numerical {
            sector,
            reason: "Hermitian eigensolver did not converge".into(),
        }
    })?;
    jacobi_polish(h, eig.eigenvectors, sector)
}

const JACOBI_MAX_SWEEPS: usize = 30;

/// Cyclic complex Jacobi sweeps on `Q†HQ`. The QL iteration can stop with
/// off-diagonal residue around `1e-10` when tiny and O(1) eigenvalues meet;
/// starting from its nearly diagonal output this converges quadratically.
fn jacobi_polish<T: Real>(h: &CMat<T>, mut q: CMat<T>, sector: i64) -> Result<(Vec<T>, CMat<T>)> {
    let n = h.nrows();
    let mut a = q.adjoint() * h * &q;
    let tol = eps::<T>() * max_abs(h);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a[(p, r)];
                let mag = ComplexField::modulus(apr);
                if mag <= tol {
                    continue;
                }
                rotated = true;
                // phase to make the pair real, then the symmetric Schur rotation
                let u = apr / c(mag);
                let (app, arr) = (a[(p, p)].re, a[(r, r)].re);
                let zeta = (arr - app) / (T::lit(2.0) * mag);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let t = if zeta == T::zero() { T::one() } else { t };
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = t * cs;
                let (j_pp, j_pr, j_rp, j_rr) = (c(cs), c(sn), -u.conj() * c(sn), u.conj() * c(cs));
                for k in 0..n {
                    let (x, y) = (a[(k, p)], a[(k, r)]);
                    a[(k, p)] = x * j_pp + y * j_rp;
                    a[(k, r)] = x * j_pr + y * j_rr;
                    let (x, y) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = x * j_pp + y * j_rp;
                    q[(k, r)] = x * j_pr + y * j_rr;
                }
                for k in 0..n {
                    let (x, y) = (a[(p, k)], a[(r, k)]);
                    a[(p, k)] = j_pp.conj() * x + j_rp.conj() * y;
                    a[(r, k)] = j_pr.conj() * x + j_rr.conj() * y;
                }
                a[(p, r)] = c(T::zero());
                a[(r, p)] = c(T::zero());
            }
        }
        if !rotated {
            return Ok(((0..n).map(|i| a[(i, i)].re).collect(), q));
        }
    }
    Err(Error::Numerical {
        sector,
        reason: "Jacobi refinement did not converge".into(),
    })
}

/// `Q f(λ) Q†` for a Hermitian eigendecomposition.
fn spectral_function<T: Real>(vals: &[T], vecs: &CMat<T>, f: impl Fn(T) -> C<T>) -> CMat<T> {
    let mut scaled = vecs.clone();
    for (j, &l) in vals.iter().enumerate() {
        let fl = f(l);
        scaled.column_mut(j).scale_mut(ComplexField::modulus(fl));
        if fl.im != T::zero() || fl.re < T::zero() {
            let phase = fl / c(ComplexField::modulus(fl));
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= phase);
        }
    }
    &scaled * vecs.adjoint()
}

/// `exp(−iHτ)` by Hermitian spectral decomposition.
pub fn evolve_sector<T: Real>(h: &SectorHamiltonian<T>, tau: T) -> Result<CMat<T>> {
    let (vals, vecs) = hermitian_eigen(&h.matrix, h.two_j - 1)?;
    Ok(spectral_function(&vals, &vecs, |l| {
        let phi = -l * tau;
        Complex::new(phi.cos(), phi.sin())
    }))
}

/// `V_{I_z}` and `W_{I_z}` for one nuclear sector.
#[derive(Clone, Debug)]
pub struct SectorBlocks<T: Real> {
    pub sector: SectorIndex,
    /// Up-up corner of the sector unitary: nuclear map for outcome ↑.
    pub v: CMat<T>,
    /// Down-up corner, mapping `I_z` to `I_z + 1`: nuclear map for outcome ↓.
    /// Absent for propagators imposed without an underlying unitary.
    pub w: Option<CMat<T>>,
}

/// Direct sum of per-sector conditioned blocks, indexed by ascending `I_z`.
#[derive(Clone, Debug)]
pub struct ConditionedPropagator<T: Real> {
    tau: T,
    k: u32,
    blocks: Vec<SectorBlocks<T>>,
}

impl<T: Real> ConditionedPropagator<T> {
    /// Identity propagator (`τ = 0`) on `k` nuclei.
    pub fn identity(k: u32) -> Result<Self> {
        let blocks = sectors(k)
            .map(|s| {
                let d = enumerate_sector(s)?.len();
                let dd = s
                    .raised()
                    .map_or(Ok(0), |r| enumerate_sector(r).map(|b| b.len()))?;
                Ok(SectorBlocks {
                    sector: s,
                    v: CMat::identity(d, d),
                    w: Some(CMat::zeros(dd, d)),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tau: T::zero(),
            k,
            blocks,
        })
    }

    /// Propagator from explicitly supplied `V` blocks (no Kraus partner), one
    /// per sector in ascending `I_z`. Every singular value must be `≤ 1`.
    pub fn imposed(k: u32, tau: T, v_blocks: Vec<CMat<T>>) -> Result<Self> {
        if v_blocks.len() != k as usize + 1 {
            return domain(format!(
                "{} blocks supplied for {} sectors",
                v_blocks.len(),
                k + 1
            ));
        }
        let mut blocks = Vec::with_capacity(v_blocks.len());
        for (s, v) in sectors(k).zip(v_blocks) {
            let d = enumerate_sector(s)?.len();
            if v.shape() != (d, d) {
                return domain(format!(
                    "block for 2I_z = {} is {:?}, expected {d}×{d}",
                    s.two_iz(),
                    v.shape()
                ));
            }
            if max_singular_value(&v) > T::one() + T::lit(1e-12) {
                return domain(format!(
                    "block for 2I_z = {} is not a contraction",
                    s.two_iz()
                ));
            }
            blocks.push(SectorBlocks {
                sector: s,
                v,
                w: None,
            });
        }
        Ok(Self { tau, k, blocks })
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn blocks(&self) -> &[SectorBlocks<T>] {
        &self.blocks
    }

    pub fn block(&self, sector: SectorIndex) -> Option<&SectorBlocks<T>> {
        if sector.k() != self.k {
            return None;
        }
        self.blocks.get(sector.n_up() as usize)
    }

    /// Phase `e^{−iE_{J_m}τ}` of the fully polarized sector.
    pub fn top_phase(&self) -> C<T> {
        self.blocks.last().expect("at least one sector").v[(0, 0)]
    }

    pub fn has_kraus_partner(&self) -> bool {
        self.blocks.iter().all(|b| b.w.is_some())
    }

    /// Worst `max |V†V + W†W − I|` over sectors.
    pub fn kraus_defect(&self) -> Option<T> {
        self.blocks
            .iter()
            .map(|b| {
                let w = b.w.as_ref()?;
                let d = b.v.ncols();
                Some(max_abs(
                    &(b.v.adjoint() * &b.v + w.adjoint() * w - CMat::identity(d, d)),
                ))
            })
            .try_fold(T::zero(), |m, x| x.map(|x| if x > m { x } else { m }))
    }
}

pub(crate) fn max_singular_value<T: Real>(m: &CMat<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b))
}

/// Exponentiates every sector and keeps the electron-up columns.
pub fn conditioned_blocks<T: Real>(
    params: &SystemParams<T>,
    tau: T,
) -> Result<ConditionedPropagator<T>> {
    conditioned_blocks_capped(params, tau, DEFAULT_DIMENSION_CAP)
}

pub fn conditioned_blocks_capped<T: Real>(
    params: &SystemParams<T>,
    tau: T,
    cap: usize,
) -> Result<ConditionedPropagator<T>> {
    let k = params.k();
    let all: Vec<SectorIndex> = sectors(k).collect();
    if let Some(dim) = all
        .iter()
        .map(|s| sector_pair_dim(k, s.two_iz() + 1))
        .find(|&d| d > cap)
    {
        return Err(Error::CapExceeded { dim, cap });
    }
    let blocks = all
        .into_par_iter()
        .map(|s| {
            let h = build_sector_hamiltonian(params, s.two_iz() + 1)?;
            let u = evolve_sector(&h, tau)?;
            let (du, dd) = (h.up_dim(), h.down_dim());
            Ok(SectorBlocks {
                sector: s,
                v: u.view((0, 0), (du, du)).into_owned(),
                w: Some(u.view((du, 0), (dd, du)).into_owned()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionedPropagator { tau, k, blocks })
}

/// Eigenvalues of one block, sorted by descending modulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorSpectrum {
    #[serde(rename = "sector_two_Iz")]
    pub sector_two_iz: i64,
    /// `(re, im)` pairs in the same order as `eigen_moduli`.
    pub eigenvalues: Vec<(f64, f64)>,
    pub eigen_moduli: Vec<f64>,
    pub degenerate_count: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub threshold: f64,
    pub sectors: Vec<SectorSpectrum>,
}

impl SpectralReport {
    /// Largest modulus outside the fully polarized sector.
    pub fn max_non_top_modulus(&self) -> f64 {
        self.sectors
            .iter()
            .take(self.sectors.len().saturating_sub(1))
            .flat_map(|s| s.eigen_moduli.first().copied())
            .fold(0.0, f64::max)
    }

    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.max_non_top_modulus()
    }

    pub fn total_degenerate(&self) -> usize {
        self.sectors.iter().map(|s| s.degenerate_count).sum()
    }

    pub fn is_degenerate(&self) -> bool {
        self.total_degenerate() > 0
    }

    pub fn sector(&self, two_iz: i64) -> Option<&SectorSpectrum> {
        self.sectors.iter().find(|s| s.sector_two_iz == two_iz)
    }
}

/// General complex eigenvalues via a Schur decomposition.
pub fn general_eigenvalues<T: Real>(m: &CMat<T>, sector: i64) -> Result<Vec<C<T>>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let schur =
        Schur::try_new(m.clone(), eps::<T>(), EIGEN_MAX_ITER).ok_or_else(|| Error::Numerical {
            sector,
            reason: "Schur iteration did not converge".into(),
        })?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

/// Eigenvalue moduli of every block; non-top blocks with modulus within
/// `threshold` of one are counted as degenerate.
pub fn spectral_report<T: Real>(
    prop: &ConditionedPropagator<T>,
    threshold: f64,
) -> Result<SpectralReport> {
    let sectors = prop
        .blocks
        .par_iter()
        .map(|b| {
            let mut ev: Vec<(f64, f64)> = general_eigenvalues(&b.v, b.sector.two_iz())?
                .into_iter()
                .map(|z| (z.re.to_f64_lossy(), z.im.to_f64_lossy()))
                .collect();
            ev.sort_by(|x, y| x.0.hypot(x.1).total_cmp(&y.0.hypot(y.1)).reverse());
            let eigen_moduli: Vec<f64> = ev.iter().map(|z| z.0.hypot(z.1)).collect();
            let degenerate_count = if b.sector.is_top() {
                0
            } else {
                eigen_moduli
                    .iter()
                    .filter(|&&m| m >= 1.0 - threshold)
                    .count()
            };
            Ok(SectorSpectrum {
                sector_two_iz: b.sector.two_iz(),
                eigenvalues: ev,
                eigen_moduli,
                degenerate_count,
                threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralReport { threshold, sectors })
}

/// `h = A₋A₊` restricted to `basis` (zero on the fully polarized sector).
pub fn flip_flop_h<T: Real>(alphas: &[T], basis: &SectorBasis) -> Result<CMat<T>> {
    match basis.sector().raised() {
        None => Ok(CMat::zeros(basis.len(), basis.len())),
        Some(r) => {
            let raised = enumerate_sector(r)?;
            let lower = collective_lowering(alphas, &raised, basis)?;
            Ok(&lower * lower.adjoint())
        }
    }
}

/// Closed-form conditioned block for the flip-flop exchange.
///
/// With no nuclear interaction and sector-constant diagonal energies, each
/// eigenvector of `h = A₋A₊` (eigenvalue `λ`) pairs with one electron-down
/// state into a two-level system with coupling `g = c𝒜√λ`. For zero
/// detuning the block is `cos(c𝒜τ√h)` times a sector phase; otherwise the
/// detuned two-level amplitude is used. Inhomogeneous couplings are only
/// accepted with the longitudinal `A_zS_z` term switched off.
pub fn analytic_flipflop_v<T: Real>(
    params: &SystemParams<T>,
    tau: T,
    sector: SectorIndex,
) -> Result<CMat<T>> {
    if !params.hnuc().is_none() {
        return domain("closed-form flip-flop propagator requires H_nuc = none");
    }
    if params.overhauser() && !params.is_homogeneous() {
        return domain(
            "closed-form flip-flop propagator with the A_zS_z term requires homogeneous coupling",
        );
    }
    if sector.k() != params.k() {
        return domain("sector does not match the parameter set");
    }
    let basis = enumerate_sector(sector)?;
    let half = T::lit(0.5);
    let iz = T::lit(sector.iz());
    let a0 = params.alphas()[0];
    let (mut e_up, mut e_down) = (
        half * params.electron_zeeman() + params.nuclear_zeeman() * iz,
        -half * params.electron_zeeman() + params.nuclear_zeeman() * (iz + T::one()),
    );
    if params.overhauser() {
        // homogeneous coupling: A_z = α·I_z on each side
        e_up += params.effective_a() * half * a0 * iz;
        e_down -= params.effective_a() * half * a0 * (iz + T::one());
    }
    let mean = (e_up + e_down) * half;
    let half_det = (e_up - e_down) * half;
    let coupling = T::lit(params.convention().cosine_constant()) * params.hyperfine_a();

    let h = flip_flop_h(params.alphas(), &basis)?;
    let (vals, vecs) = hermitian_eigen(&h, sector.two_iz())?;
    let global = Complex::new((-mean * tau).cos(), (-mean * tau).sin());
    Ok(spectral_function(&vals, &vecs, |lambda| {
        let g = coupling * lambda.max(T::zero()).sqrt();
        let omega = (half_det * half_det + g * g).sqrt();
        let amp = if omega == T::zero() {
            c(T::one())
        } else {
            Complex::new(
                (omega * tau).cos(),
                -(half_det / omega) * (omega * tau).sin(),
            )
        };
        global * amp
    }))
}

/// Orthonormal columns spanning the kernel of `A₊` on `sector`.
pub fn dark_states<T: Real>(params: &SystemParams<T>, sector: SectorIndex) -> Result<CMat<T>> {
    let basis = enumerate_sector(sector)?;
    let d = basis.len();
    let Some(r) = sector.raised() else {
        return Ok(CMat::identity(d, d));
    };
    let raised = enumerate_sector(r)?;
    let raise = collective_lowering(params.alphas(), &raised, &basis)?.adjoint();
    // pad to square so the SVD returns a complete right basis
    let n = raise.nrows().max(d);
    let mut padded = CMat::zeros(n, d);
    padded.view_mut((0, 0), raise.shape()).copy_from(&raise);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let tol = T::lit(NULL_THRESHOLD);
    let kernel: Vec<_> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= tol)
        .map(|(j, _)| v_t.row(j).adjoint())
        .collect();
    let mut out = CMat::zeros(d, kernel.len());
    for (j, col) in kernel.iter().enumerate() {
        out.set_column(j, col);
    }
    Ok(out)
}

/// Largest power handled by [`moment_check`].
pub const MOMENT_MAX_ORDER: u32 = 6;

/// Compares the up-up corner of `Hⁿ` (direct) with its expansion in the
/// nuclear part `ℋ` and the flip-flop factors `(c𝒜)²A₋(…)A₊`.
///
/// Every word over {ℋ, flip} of length `n` with an even number of flips
/// contributes; between flips the electron is down and `ℋ` acts on the
/// `I_z + 1` sector.
pub fn moment_check<T: Real>(
    params: &SystemParams<T>,
    n: u32,
    two_j: i64,
) -> Result<(CMat<T>, CMat<T>)> {
    if n > MOMENT_MAX_ORDER {
        return domain(format!("moment order {n} exceeds {MOMENT_MAX_ORDER}"));
    }
    let h = build_sector_hamiltonian(params, two_j)?;
    let du = h.up_dim();
    let mut power = CMat::identity(h.dim(), h.dim());
    for _ in 0..n {
        power = &power * &h.matrix;
    }
    let direct = power.view((0, 0), (du, du)).into_owned();

    let Some(up) = &h.up_basis else {
        return Ok((direct, CMat::zeros(0, 0)));
    };
    let script_up = nuclear_part(params, two_j, up)?;
    let (script_down, lower) = match &h.down_basis {
        Some(down) => {
            let g = params.effective_a() * T::lit(0.5);
            (
                Some(nuclear_part(params, two_j, down)?),
                Some(collective_lowering(params.alphas(), down, up)? * c(g)),
            )
        }
        None => (None, None),
    };

    let mut reconstructed = CMat::zeros(du, du);
    for word in 0u32..(1 << n) {
        if word.count_ones() % 2 == 1 {
            continue;
        }
        if word != 0 && lower.is_none() {
            continue;
        }
        // factors applied right to left; bit i set = flip at step i
        let mut acc = CMat::identity(du, du);
        let mut electron_up = true;
        for step in 0..n {
            let flip = (word >> step) & 1 == 1;
            acc = match (flip, electron_up) {
                (false, true) => &script_up * &acc,
                (false, false) => script_down.as_ref().unwrap() * &acc,
                (true, true) => lower.as_ref().unwrap().adjoint() * &acc,
                (true, false) => lower.as_ref().unwrap() * &acc,
            };
            if flip {
                electron_up = !electron_up;
            }
        }
        reconstructed += acc;
    }
    Ok((direct, reconstructed))
}

/// Nonzero eigenvalues of `h` over every sector.
pub fn flip_flop_frequencies<T: Real>(params: &SystemParams<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for s in sectors(params.k()) {
        let basis = enumerate_sector(s)?;
        let (vals, _) = hermitian_eigen(&flip_flop_h(params.alphas(), &basis)?, s.two_iz())?;
        out.extend(vals.into_iter().filter(|&l| l > T::lit(1e-9)));
    }
    Ok(out)
}

/// True when no nonzero `h` eigenvalue puts `cos(c𝒜τ√λ)` within `1e-6` of ±1.
pub fn is_generic_tau<T: Real>(params: &SystemParams<T>, tau: T, frequencies: &[T]) -> bool {
    let ca = T::lit(params.convention().cosine_constant()) * params.hyperfine_a();
    frequencies
        .iter()
        .all(|&l| (ca * tau * l.sqrt()).cos().abs() <= T::one() - T::lit(1e-6))
}

/// Draws `τ` uniformly from `[lo, hi)` until it is generic for `params`.
pub fn draw_generic_tau<T: Real, R: Rng + ?Sized>(
    params: &SystemParams<T>,
    rng: &mut R,
    lo: f64,
    hi: f64,
) -> Result<T> {
    let freqs = flip_flop_frequencies(params)?;
    for _ in 0..10_000 {
        let tau = T::lit(rng.gen_range(lo..hi));
        if is_generic_tau(params, tau, &freqs) {
            return Ok(tau);
        }
    }
    domain("no generic τ found in the requested interval")
}

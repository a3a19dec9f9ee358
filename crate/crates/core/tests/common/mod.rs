#![allow(dead_code)]

use nalgebra::DMatrix;
use nucpol::hamiltonian::{HNucSpec, SystemParams};
use nucpol::scalar::CMat;
use num_complex::Complex64;
use rand::Rng;

pub fn random_alphas<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.2 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_dipolar<R: Rng>(rng: &mut R, k: usize, scale: f64) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..i {
            let x = rng.gen_range(-scale..scale);
            b[(i, j)] = x;
            b[(j, i)] = x;
        }
    }
    b
}

/// Arbitrary parameter draw: random couplings, Zeeman terms, Overhauser
/// switch and dipolar matrix.
pub fn random_params<R: Rng>(rng: &mut R, k: usize) -> SystemParams<f64> {
    SystemParams::new(rng.gen_range(0.5..5.0), random_alphas(rng, k))
        .unwrap()
        .with_zeeman(rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..0.2))
        .with_overhauser(rng.gen_bool(0.7))
        .with_hnuc(HNucSpec::SecularDipolar(random_dipolar(rng, k, 0.5)))
        .unwrap()
}

fn kron_all(factors: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
    factors
        .iter()
        .skip(1)
        .fold(factors[0].clone(), |acc, f| acc.kronecker(f))
}

fn re(rows: usize, cols: usize, v: &[f64]) -> DMatrix<Complex64> {
    DMatrix::from_row_iterator(rows, cols, v.iter().map(|&x| Complex64::new(x, 0.0)))
}

/// Single-spin operator `op` on nucleus `i` of `k`. Index order is the
/// occupation word (most significant factor = nucleus `k − 1`), single-spin
/// basis `(↓, ↑)`.
pub fn nuclear_op(op: &DMatrix<Complex64>, i: usize, k: usize) -> DMatrix<Complex64> {
    let id = DMatrix::<Complex64>::identity(2, 2);
    let factors: Vec<_> = (0..k)
        .rev()
        .map(|j| if j == i { op.clone() } else { id.clone() })
        .collect();
    kron_all(&factors)
}

pub fn nuc_lower() -> DMatrix<Complex64> {
    re(2, 2, &[0.0, 1.0, 0.0, 0.0])
}

pub fn nuc_z() -> DMatrix<Complex64> {
    re(2, 2, &[-0.5, 0.0, 0.0, 0.5])
}

/// Full `2^(K+1)` Hamiltonian built from Kronecker products. Electron is the
/// most significant factor with basis `(↑, ↓)`.
pub fn full_space_hamiltonian(p: &SystemParams<f64>) -> DMatrix<Complex64> {
    let k = p.k() as usize;
    let n = 1usize << k;
    let idn = DMatrix::<Complex64>::identity(n, n);
    let s_z = re(2, 2, &[0.5, 0.0, 0.0, -0.5]);
    let s_m = re(2, 2, &[0.0, 0.0, 1.0, 0.0]);
    let s_p = s_m.adjoint();
    let mut i_z = DMatrix::zeros(n, n);
    let mut a_z = DMatrix::zeros(n, n);
    let mut a_m = DMatrix::zeros(n, n);
    for (i, &al) in p.alphas().iter().enumerate() {
        let z = nuclear_op(&nuc_z(), i, k);
        i_z += &z;
        a_z += z * Complex64::new(al, 0.0);
        a_m += nuclear_op(&nuc_lower(), i, k) * Complex64::new(al, 0.0);
    }
    let a_p = a_m.adjoint();
    let mut h_nuc = DMatrix::zeros(n, n);
    if let HNucSpec::SecularDipolar(b) = p.hnuc() {
        for i in 0..k {
            for j in (i + 1)..k {
                let (zi, zj) = (nuclear_op(&nuc_z(), i, k), nuclear_op(&nuc_z(), j, k));
                let (mi, mj) = (
                    nuclear_op(&nuc_lower(), i, k),
                    nuclear_op(&nuc_lower(), j, k),
                );
                let (pi, pj) = (mi.adjoint(), mj.adjoint());
                let term = &zi * &zj - (&pi * &mj + &mi * &pj) * Complex64::new(0.25, 0.0);
                h_nuc += term * Complex64::new(b[(i, j)], 0.0);
            }
        }
    }
    let a = p.effective_a();
    let c = |x: f64| Complex64::new(x, 0.0);
    let id2 = DMatrix::<Complex64>::identity(2, 2);
    let mut h = s_z.kronecker(&idn) * c(p.electron_zeeman())
        + id2.kronecker(&i_z) * c(p.nuclear_zeeman())
        + (s_p.kronecker(&a_m) + s_m.kronecker(&a_p)) * c(a / 2.0)
        + id2.kronecker(&h_nuc);
    if p.overhauser() {
        h += s_z.kronecker(&a_z) * c(a);
    }
    h
}

/// Full-space indices in sector order: for ascending `2J`, electron-up
/// configurations then electron-down ones, each ascending by word.
pub fn sector_order(k: usize) -> Vec<(i64, usize)> {
    let n = 1usize << k;
    let mut out = Vec::new();
    let jm2 = k as i64 + 1;
    let mut two_j = -jm2;
    while two_j <= jm2 {
        for (electron, shift) in [(0usize, -1i64), (1, 1)] {
            for w in 0..n {
                let two_iz = 2 * w.count_ones() as i64 - k as i64;
                if two_iz == two_j + shift {
                    out.push((two_j, electron * n + w));
                }
            }
        }
        two_j += 2;
    }
    out
}

/// `⊗ᵢ (a|↑⟩⟨↑| + (1−a)|↓⟩⟨↓|)` in word order.
pub fn product_state(k: usize, a: f64) -> DMatrix<Complex64> {
    let single = re(2, 2, &[1.0 - a, 0.0, 0.0, a]);
    kron_all(&vec![single; k])
}

pub fn max_abs(m: &CMat<f64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Two nuclei with `𝒜α₁τ = 8`, `𝒜α₂τ = 4`, `b₁₂τ = 0.2`, expressed at `τ = 1`.
pub fn pair_params<T: nucpol::scalar::Real>(
    convention: nucpol::hamiltonian::CouplingConvention,
) -> SystemParams<T> {
    let s5 = 5f64.sqrt();
    SystemParams::new(T::lit(4.0 * s5), vec![T::lit(2.0 / s5), T::lit(1.0 / s5)])
        .unwrap()
        .with_convention(convention)
        .with_hnuc(HNucSpec::uniform_dipolar(2, T::lit(0.2)))
        .unwrap()
}

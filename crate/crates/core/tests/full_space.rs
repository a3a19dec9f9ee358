mod common;

use common::*;
use nalgebra::DMatrix;
use nucpol::hamiltonian::{build_hnuc, build_sector_hamiltonian, HNucSpec, SystemParams};
use nucpol::spinspace::{enumerate_sector, sectors};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_direct_sum(p: &SystemParams<f64>) {
    let k = p.k() as usize;
    let full = full_space_hamiltonian(p);
    let order = sector_order(k);
    assert_eq!(order.len(), 2 << k);
    let perm: Vec<usize> = order.iter().map(|&(_, idx)| idx).collect();
    let permuted = DMatrix::from_fn(perm.len(), perm.len(), |r, c| full[(perm[r], perm[c])]);

    let mut assembled = DMatrix::<Complex64>::zeros(perm.len(), perm.len());
    let mut offset = 0;
    let jm2 = k as i64 + 1;
    for two_j in (-jm2..=jm2).step_by(2) {
        let h = build_sector_hamiltonian(p, two_j).unwrap();
        let d = h.dim();
        assembled
            .view_mut((offset, offset), (d, d))
            .copy_from(&h.matrix);
        offset += d;
    }
    assert_eq!(offset, perm.len());
    let dev = max_abs(&(&permuted - &assembled));
    assert!(dev <= 1e-12, "K={k}: direct sum deviates by {dev:e}");

    // [H, J_z] = 0 on the full space
    let n = 1usize << k;
    let jz = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        if r != c {
            return Complex64::new(0.0, 0.0);
        }
        let (e, w) = (r / n, r % n);
        let sz = if e == 0 { 0.5 } else { -0.5 };
        Complex64::new(sz + w.count_ones() as f64 - k as f64 / 2.0, 0.0)
    });
    assert!(max_abs(&(&full * &jz - &jz * &full)) <= 1e-12);
}

#[test]
fn sector_hamiltonians_form_the_full_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 1..=3 {
        for _ in 0..5 {
            check_direct_sum(&random_params(&mut rng, k));
        }
        let flip = SystemParams::flip_flop(1.3, random_alphas(&mut rng, k)).unwrap();
        check_direct_sum(&flip);
    }
}

#[test]
fn dipolar_term_conserves_total_iz() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 2..=4 {
        let b = random_dipolar(&mut rng, k, 1.0);
        let p = SystemParams::new(1.0, random_alphas(&mut rng, k))
            .unwrap()
            .with_overhauser(false)
            .with_hnuc(HNucSpec::SecularDipolar(b.clone()))
            .unwrap();
        // isolate H_nuc: electron-up block of the full matrix minus A_z parts (off)
        let n = 1usize << k;
        let full = full_space_hamiltonian(&p);
        let hn = full.view((0, 0), (n, n)).into_owned();
        let mut iz = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..k {
            iz += nuclear_op(&nuc_z(), i, k);
        }
        assert!(max_abs(&(&hn * &iz - &iz * &hn)) <= 1e-12);
        for s in sectors(k as u32) {
            let basis = enumerate_sector(s).unwrap();
            let block = build_hnuc(&p.hnuc().clone(), &basis).unwrap();
            for (r, cr) in basis.configs().iter().enumerate() {
                for (c, cc) in basis.configs().iter().enumerate() {
                    assert!((block[(r, c)] - hn[(cr.0 as usize, cc.0 as usize)]).norm() <= 1e-12);
                }
            }
        }
    }
}

mod common;

use common::*;
use nalgebra::DMatrix;
use nucpol::hamiltonian::{CouplingConvention, HNucSpec, SystemParams};
use nucpol::largek::{diagonal_expectation, required_m, required_m_uneven, DiagonalModelParams};
use nucpol::propagator::{
    analytic_flipflop_v, conditioned_blocks, draw_generic_tau, moment_check, spectral_report,
    ConditionedPropagator, DEFAULT_DEGENERACY_THRESHOLD,
};
use nucpol::protocol::{
    even_state_closed_form, run_conditioned, run_trajectory, FailurePolicy, TrajectoryPolicy,
};
use nucpol::scalar::{max_abs_diff, CMat};
use nucpol::spinspace::{binomial_exact, ln_binomial, sector_dimension, sectors};
use nucpol::states::{even_polarized, weight_c, BlockedDensity, DensityBlock};
use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::{One, ToPrimitive};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Product thermal state for any `K`; matches `even_polarized` when `K` is even.
fn thermal(k: u32, a: f64) -> BlockedDensity<f64> {
    if k.is_multiple_of(2) {
        return even_polarized(k, a).unwrap();
    }
    let entries = sectors(k)
        .map(|s| {
            let d = sector_dimension(k, s.two_iz()).unwrap().exact.unwrap() as usize;
            DensityBlock {
                sector: s,
                log_weight: weight_c(s.two_iz(), a, k).unwrap(),
                block: DMatrix::identity(d, d) * Complex64::new(1.0 / d as f64, 0.0),
            }
        })
        .collect();
    BlockedDensity::new(k, entries, 0.0).unwrap()
}

fn bigint_binomials(n: u64) -> Vec<BigUint> {
    let mut row = vec![BigUint::one()];
    for _ in 0..n {
        let mut next = vec![BigUint::one(); row.len() + 1];
        for i in 1..row.len() {
            next[i] = &row[i - 1] + &row[i];
        }
        row = next;
    }
    row
}

#[test]
fn binomials_match_big_integers() {
    for n in [1u64, 7, 20, 45, 60, 61, 200, 577, 1000] {
        let row = bigint_binomials(n);
        for (k, exact) in row.iter().enumerate() {
            let k = k as u64;
            if let Some(small) = binomial_exact(n, k) {
                assert_eq!(BigUint::from(small), *exact, "C({n},{k})");
            }
            let ln_exact = exact.to_f64().unwrap().ln();
            let got = ln_binomial(n, k);
            assert!(
                (got - ln_exact).abs() <= 1e-12 * ln_exact.abs().max(1.0),
                "ln C({n},{k}): {got} vs {ln_exact}"
            );
        }
        if n <= 1000 {
            let d = sector_dimension(n as u32, n as i64 - 2).unwrap();
            assert!((d.ln - row[1].to_f64().unwrap().ln()).abs() < 1e-12);
        }
    }
}

fn unitary_max_singular(m: &CMat<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_flipflop_matches_numerics(seed in any::<u64>(), k in 1usize..=4, a in 0.3f64..6.0, tau in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SystemParams::flip_flop(a, random_alphas(&mut rng, k)).unwrap();
        let prop = conditioned_blocks(&p, tau).unwrap();
        for s in sectors(k as u32) {
            let analytic = analytic_flipflop_v(&p, tau, s).unwrap();
            let dev = max_abs_diff(&prop.block(s).unwrap().v, &analytic);
            prop_assert!(dev <= 1e-10, "K={} sector {}: {:e}", k, s.two_iz(), dev);
        }
    }

    #[test]
    fn propagators_are_complete_contractions(seed in any::<u64>(), k in 1usize..=4, tau in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, k);
        let prop = conditioned_blocks(&p, tau).unwrap();
        prop_assert!(prop.kraus_defect().unwrap() <= 1e-10);
        for b in prop.blocks() {
            prop_assert!(unitary_max_singular(&b.v) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn moment_expansion_matches_direct_powers(seed in any::<u64>(), k in 1usize..=3, n in 0u32..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, k);
        let jm2 = k as i64 + 1;
        for two_j in (-jm2..=jm2).step_by(2) {
            let (direct, rebuilt) = moment_check(&p, n, two_j).unwrap();
            if rebuilt.is_empty() {
                continue;
            }
            let scale = direct.iter().map(|z| z.norm()).fold(1.0, f64::max);
            prop_assert!(max_abs_diff(&direct, &rebuilt) <= 1e-10 * scale);
        }
    }

    #[test]
    fn dual_paths_agree_and_success_never_grows(seed in any::<u64>(), k in 1u32..=4, a in 0.05f64..0.95, tau in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, k as usize);
        let prop = conditioned_blocks(&p, tau).unwrap();
        let rho = thermal(k, a);
        let rec = run_conditioned(&rho, &prop, 100).unwrap();
        for w in rec.points.windows(2) {
            prop_assert!(w[1].log10_p_m <= w[0].log10_p_m + 1e-12);
        }
        for m in [0u64, 1, 2, 7, 33, 100] {
            let (iz, ln_p) = even_state_closed_form(k, a, &prop, m).unwrap();
            let pt = &rec.points[m as usize];
            prop_assert!((iz - pt.expected_iz).abs() <= 1e-10 * iz.abs().max(1.0));
            let lp = pt.log10_p_m * std::f64::consts::LN_10;
            prop_assert!((ln_p - lp).abs() <= 1e-10 * ln_p.abs().max(1.0));
        }
    }
}

#[test]
fn even_state_matches_product_state() {
    for k in 1..=8u32 {
        for a in [0.5, 0.8, 0.13] {
            let full = product_state(k as usize, a);
            let rho = thermal(k, a);
            let mut covered = 0.0;
            for e in rho.entries() {
                let basis = nucpol::spinspace::enumerate_sector(e.sector).unwrap();
                let w = e.log_weight.exp();
                for (r, cr) in basis.configs().iter().enumerate() {
                    for (c, cc) in basis.configs().iter().enumerate() {
                        let want = full[(cr.0 as usize, cc.0 as usize)];
                        let got = e.block[(r, c)] * w;
                        assert!((want - got).norm() <= 1e-12, "K={k} a={a}");
                    }
                }
                covered += w;
            }
            assert!((covered - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn dipolar_coupling_drives_full_polarization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in [2u32, 3] {
        let rho = thermal(k, 0.5);
        for _ in 0..3 {
            let p = SystemParams::new(2.0, random_alphas(&mut rng, k as usize))
                .unwrap()
                .with_hnuc(HNucSpec::SecularDipolar(random_dipolar(
                    &mut rng, k as usize, 0.6,
                )))
                .unwrap();
            let tau = draw_generic_tau(&p, &mut rng, 0.3, 1.5).unwrap();
            let prop = conditioned_blocks(&p, tau).unwrap();
            let report = spectral_report(&prop, DEFAULT_DEGENERACY_THRESHOLD).unwrap();
            assert!(!report.is_degenerate());
            let m = (10.0 / report.spectral_gap()).ceil() as u64;
            assert!(
                m < 500_000,
                "gap {} too small for this draw",
                report.spectral_gap()
            );
            let rec = run_conditioned(&rho, &prop, m).unwrap();
            let dev = k as f64 / 2.0 - rec.last().expected_iz;
            assert!(dev < 1e-3, "K={k}: deviation {dev:e} after {m} steps");
        }
    }
}

#[test]
fn flip_flop_alone_leaves_dark_weight() {
    let p = SystemParams::flip_flop(2.0, vec![0.8, 0.6]).unwrap();
    let tau = 0.9;
    let prop = conditioned_blocks(&p, tau).unwrap();
    let rec = run_conditioned(&even_polarized::<f64>(2, 0.5).unwrap(), &prop, 3000).unwrap();
    let last = rec.last().expected_iz;
    assert!((last - 0.5).abs() < 1e-3, "plateau {last}");
}

#[test]
fn trajectories_reproduce_post_selection() {
    let p = pair_params::<f64>(CouplingConvention::HalvedCoupling);
    let prop = conditioned_blocks(&p, 1.0).unwrap();
    let rho = even_polarized::<f64>(2, 0.5).unwrap();
    let rec = run_conditioned(&rho, &prop, 5).unwrap();
    let n = 10_000u64;
    for m in [1u64, 2, 5] {
        let policy = TrajectoryPolicy {
            max_attempts: m,
            target_streak: m,
            on_failure: FailurePolicy::Carry,
        };
        let mut hits = 0u64;
        for seed in 0..n {
            let t = run_trajectory(&rho, &prop, seed, policy).unwrap();
            if t.reached_target {
                hits += 1;
                assert!((t.final_expected_iz - rec.points[m as usize].expected_iz).abs() < 1e-12);
            }
        }
        let p_m = 10f64.powf(rec.points[m as usize].log10_p_m);
        let sigma = (p_m * (1.0 - p_m) / n as f64).sqrt();
        let freq = hits as f64 / n as f64;
        assert!(
            (freq - p_m).abs() <= 3.0 * sigma,
            "M={m}: {freq} vs {p_m} ± {sigma}"
        );
    }
}

#[test]
fn completed_streaks_do_not_lower_polarization() {
    let p = pair_params::<f64>(CouplingConvention::HalvedCoupling);
    let prop = conditioned_blocks(&p, 1.0).unwrap();
    let rho = even_polarized::<f64>(2, 0.5).unwrap();
    for seed in 0..200 {
        for on_failure in [FailurePolicy::Carry, FailurePolicy::Reset] {
            let policy = TrajectoryPolicy {
                max_attempts: 400,
                target_streak: 30,
                on_failure,
            };
            let t = run_trajectory(&rho, &prop, seed, policy).unwrap();
            for s in &t.streaks {
                assert!(s.end_expected_iz >= s.start_expected_iz - 1e-12);
            }
        }
    }
}

#[test]
fn diagonal_model_is_monotone_with_expected_slope() {
    for k in [1u32, 10, 100, 1000, 10_000] {
        for a in [0.3, 0.6, 0.9] {
            for vbar in [0.5, 0.9, 0.99] {
                let params = DiagonalModelParams::new(k, a, vbar).unwrap();
                let mut prev = f64::NEG_INFINITY;
                for m in (0..400).step_by(7) {
                    let (iz, _) = diagonal_expectation(params, m);
                    assert!(iz >= prev - 1e-9 * k as f64, "K={k} a={a} V={vbar} M={m}");
                    prev = iz;
                }
            }
        }
    }
    let params = DiagonalModelParams::new(1000, 0.8, 0.9).unwrap();
    let (_, l1) = diagonal_expectation(params, 1);
    let (_, l2) = diagonal_expectation(params, 2);
    assert!(((l2 - l1) - 2.0 * 0.9f64.ln()).abs() < 1e-9);
    let (_, l_late) = diagonal_expectation(params, 5000);
    let (_, l_later) = diagonal_expectation(params, 5001);
    assert!((l_later - l_late).abs() < 1e-12);
}

#[test]
fn required_m_follows_asymptotic_scaling() {
    let vbar = 0.9;
    for a in [0.6, 0.8, 0.95] {
        for theta in [0.99, 0.999] {
            let mut prev_err = f64::INFINITY;
            for k in [100u32, 1000, 10_000] {
                let params = DiagonalModelParams::new(k, a, vbar).unwrap();
                let m = required_m(params, theta).unwrap() as f64;
                let predicted = weight_c(k as i64, a, k).unwrap() / (2.0 * vbar.ln());
                let err = (m / predicted - 1.0).abs();
                // the θ correction grows like ln K against a leading term linear in K
                assert!(err < prev_err, "K={k} a={a}: ratio not converging");
                if k >= 1000 {
                    assert!(err <= 0.1, "K={k} a={a} θ={theta}: {m} vs {predicted}");
                }
                assert!(required_m_uneven(params, theta).unwrap() as f64 <= m);
                prev_err = err;
            }
        }
    }
}

#[test]
fn exact_engine_matches_diagonal_model() {
    let (k, vbar) = (4u32, 0.9);
    let blocks: Vec<CMat<f64>> = sectors(k)
        .map(|s| {
            let d = sector_dimension(k, s.two_iz()).unwrap().exact.unwrap() as usize;
            let v = if s.is_top() { 1.0 } else { vbar };
            DMatrix::identity(d, d) * Complex64::new(v, 0.0)
        })
        .collect();
    let prop = ConditionedPropagator::imposed(k, 1.0, blocks).unwrap();
    for a in [0.5, 0.8] {
        let rec = run_conditioned(&even_polarized::<f64>(k, a).unwrap(), &prop, 60).unwrap();
        let params = DiagonalModelParams::new(k, a, vbar).unwrap();
        for pt in &rec.points {
            let (iz, ln_p) = diagonal_expectation(params, pt.m);
            assert!((pt.expected_iz - iz).abs() <= 1e-10);
            assert!((pt.log10_p_m * std::f64::consts::LN_10 - ln_p).abs() <= 1e-10);
        }
    }
}

#[test]
fn single_precision_pipeline_tracks_double() {
    let p32 = pair_params::<f32>(CouplingConvention::HalvedCoupling);
    let p64 = pair_params::<f64>(CouplingConvention::HalvedCoupling);
    let r32 = run_conditioned(
        &even_polarized::<f32>(2, 0.8).unwrap(),
        &conditioned_blocks(&p32, 1.0).unwrap(),
        50,
    )
    .unwrap();
    let r64 = run_conditioned(
        &even_polarized::<f64>(2, 0.8).unwrap(),
        &conditioned_blocks(&p64, 1.0).unwrap(),
        50,
    )
    .unwrap();
    for (x, y) in r32.points.iter().zip(&r64.points) {
        assert!((x.expected_iz - y.expected_iz).abs() < 1e-3);
    }
}

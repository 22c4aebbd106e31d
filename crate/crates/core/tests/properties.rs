use proptest::prelude::*;

use twoscale_core::effham::{legendre_table, EffectiveHamiltonianTable};
use twoscale_core::families::{BumpSigma, ConstantSigma};
use twoscale_core::grid::{FastGrid, TensorGrid};
use twoscale_core::hj::{rate_function, solve_effective_hj};
use twoscale_core::mc::lse_estimate;
use twoscale_core::measure::{effective_h_super, solve_stationary_fp};
use twoscale_core::model::Regime;
use twoscale_core::payoff::FnPayoff;

fn quadratic_table(c: f64) -> EffectiveHamiltonianTable {
    EffectiveHamiltonianTable::from_fn(
        Regime::Supercritical,
        TensorGrid::uniform(1, -3.0, 3.0, 1.0).unwrap(),
        TensorGrid::uniform(1, -4.0, 4.0, 0.05).unwrap(),
        move |_, p| c * p[0] * p[0],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lse_shift_invariance(
        hv in prop::collection::vec(-3.0f64..3.0, 2..200),
        shift in -10.0f64..10.0,
        eps in 0.05f64..1.0,
    ) {
        let a = lse_estimate(&hv, eps, 0);
        let moved: Vec<f64> = hv.iter().map(|h| h + shift).collect();
        let b = lse_estimate(&moved, eps, 0);
        prop_assert!((b.value - a.value - shift).abs() < 1e-9);
        prop_assert!((b.std_error - a.std_error).abs() < 1e-9);
    }

    #[test]
    fn lse_lies_between_mean_and_max(hv in prop::collection::vec(-3.0f64..3.0, 2..200), eps in 0.05f64..1.0) {
        let e = lse_estimate(&hv, eps, 0);
        let mean = hv.iter().sum::<f64>() / hv.len() as f64;
        let max = hv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e.value >= mean - 1e-12 && e.value <= max + 1e-12);
    }

    #[test]
    fn hj_is_monotone_in_the_payoff(shift in 0.0f64..0.5, width in 0.2f64..2.0, center in -1.0f64..1.0) {
        let table = quadratic_table(1.0);
        let xg = TensorGrid::uniform(1, -3.0, 3.0, 0.05).unwrap();
        let low = FnPayoff::new(|x: &[f64]| x[0].tanh());
        let high = FnPayoff::new(move |x: &[f64]| x[0].tanh() + shift * (-((x[0] - center) / width).powi(2)).exp());
        let a = solve_effective_hj(&table, &low, 0.3, &xg, 0.9).unwrap();
        let b = solve_effective_hj(&table, &high, 0.3, &xg, 0.9).unwrap();
        for (u, v) in a.final_values().iter().zip(b.final_values()) {
            prop_assert!(v >= &(u - 1e-12));
        }
    }

    #[test]
    fn supercritical_h_is_two_homogeneous(p in 0.1f64..2.0, s in 0.2f64..3.0, x in -2.0f64..2.0) {
        let spec = BumpSigma::one_d(1.0, 1.0).spec(3.0).unwrap();
        let grid = FastGrid::new(1, 8.0, 0.1).unwrap();
        let mu = solve_stationary_fp(&spec, &grid).unwrap();
        let a = effective_h_super(&spec, &[x], &[p], &mu).unwrap();
        let b = effective_h_super(&spec, &[x], &[s * p], &mu).unwrap();
        prop_assert!((b - s * s * a).abs() <= 1e-10 * (1.0 + b.abs()));
    }
}

#[test]
fn rate_is_nonincreasing_in_time() {
    let lag = legendre_table(&quadratic_table(1.0), &TensorGrid::uniform(1, -8.0, 8.0, 0.05).unwrap()).unwrap();
    let sg = TensorGrid::uniform(1, -1.0, 3.0, 0.05).unwrap();
    let mut last = f64::INFINITY;
    for t in [0.5, 0.625, 1.0, 1.25, 2.0] {
        let r = rate_function(&lag, &sg, &[0.0], &[2.0], t, 20).unwrap();
        assert!(r.rate <= last + 1e-12, "t = {t}: {} > {last}", r.rate);
        last = r.rate;
    }
}

#[test]
fn double_conjugate_recovers_convex_h() {
    // H(p) = p^2 + 0.3 p^4 on |p| <= 2, conjugated twice on matching grids
    let pg = TensorGrid::uniform(1, -2.0, 2.0, 0.01).unwrap();
    let h = |p: f64| p * p + 0.3 * p.powi(4);
    let table = EffectiveHamiltonianTable::from_fn(Regime::Supercritical, TensorGrid::single_point(&[0.0]), pg.clone(), |_, p| h(p[0])).unwrap();
    let qg = TensorGrid::uniform(1, -13.0, 13.0, 0.01).unwrap();
    let lag = legendre_table(&table, &qg).unwrap();
    for p in [-1.5, -0.7, 0.0, 0.4, 1.2] {
        let back = (0..qg.len())
            .filter(|&i| lag.feasible[i])
            .map(|i| p * qg.point(i)[0] - lag.values[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((back - h(p)).abs() < 1e-3, "p = {p}: {back} vs {}", h(p));
    }
}

#[test]
fn constant_sigma_supercritical_identity() {
    let spec = ConstantSigma::one_d(0.7, 0.0, 1.0).spec(3.0).unwrap();
    let grid = FastGrid::new(1, 8.0, 0.05).unwrap();
    let mu = solve_stationary_fp(&spec, &grid).unwrap();
    for p in [-1.0, 0.3, 2.0] {
        let h = effective_h_super(&spec, &[0.0], &[p], &mu).unwrap();
        assert!((h - 0.49 * p * p).abs() < 1e-6);
    }
}

use statrs::distribution::{ContinuousCDF, Normal};

use twoscale_core::families::ConstantSigma;
use twoscale_core::mc::{estimate_tail_prob, simulate_paths, RegionSet};

fn sample_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn terminal_variances_match_closed_forms() {
    // X_t ~ N(0, 2 eps t), Y_t ~ N(0, 1 - e^{-2t/eps}) from the origin
    let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(2.0).unwrap();
    let n_paths = 200_000;
    for (eps, t) in [(0.5, 0.3), (0.2, 0.1), (0.1, 1.0)] {
        let s = simulate_paths(&spec, eps, t, &[0.0], &[0.0], 0.01, n_paths, 3).unwrap();
        let xs: Vec<f64> = (0..n_paths).map(|i| s.x_of(i)[0]).collect();
        let ys: Vec<f64> = (0..n_paths).map(|i| s.y_of(i)[0]).collect();
        let (mx, vx) = sample_var(&xs);
        let (my, vy) = sample_var(&ys);
        let ex = 2.0 * eps * t;
        let ey = 1.0 - (-2.0 * t / eps).exp();
        // variance of a sample variance of Gaussians is 2 s^4 / (n - 1)
        let k = 5.0 * (2.0 / (n_paths as f64 - 1.0)).sqrt();
        assert!((vx - ex).abs() <= k * ex, "eps {eps}, t {t}: var X {vx} vs {ex}");
        assert!((vy - ey).abs() <= k * ey, "eps {eps}, t {t}: var Y {vy} vs {ey}");
        assert!(mx.abs() <= 5.0 * (ex / n_paths as f64).sqrt());
        assert!(my.abs() <= 5.0 * (ey / n_paths as f64).sqrt());
    }
}

#[test]
fn half_space_tail_matches_gaussian() {
    // P(X_1 >= 1) at eps = 0.1 is P(Z >= 1 / sqrt(0.2))
    let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(2.0).unwrap();
    let set = RegionSet::HalfSpace {
        normal: vec![1.0],
        offset: 1.0,
    };
    let exact = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(1.0 / 0.2f64.sqrt());
    assert!((exact - 0.0127).abs() < 1e-4);
    let e = estimate_tail_prob(&spec, 0.1, 1.0, &[0.0], &[0.0], &set, 0.01, 400_000, 9).unwrap();
    assert!((e.prob - exact).abs() <= 4.0 * e.std_error, "{} vs {exact} (se {})", e.prob, e.std_error);
}

#[test]
fn runs_are_reproducible() {
    let spec = ConstantSigma::one_d(1.0, 0.5, 1.0).spec(2.0).unwrap();
    let a = simulate_paths(&spec, 0.2, 0.5, &[0.1], &[0.3], 0.01, 5_000, 42).unwrap();
    let b = simulate_paths(&spec, 0.2, 0.5, &[0.1], &[0.3], 0.01, 5_000, 42).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    let c = simulate_paths(&spec, 0.2, 0.5, &[0.1], &[0.3], 0.01, 5_000, 43).unwrap();
    assert_ne!(a.x, c.x);
}

//! Monte Carlo for the rescaled two-scale system: terminal samples, the
//! logarithmic value `eps log E exp(h(X_t) / eps)` and tail probabilities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::payoff::Payoff;

/// Below this effective sample size the estimate is flagged degenerate.
pub const MIN_ESS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSamples {
    pub n: usize,
    pub m: usize,
    /// Row-major `n_paths x n`.
    pub x: Vec<f64>,
    /// Row-major `n_paths x m`.
    pub y: Vec<f64>,
    pub dt: f64,
    pub n_steps: usize,
}

impl TerminalSamples {
    pub fn n_paths(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn x_of(&self, path: usize) -> &[f64] {
        &self.x[path * self.n..(path + 1) * self.n]
    }

    pub fn y_of(&self, path: usize) -> &[f64] {
        &self.y[path * self.m..(path + 1) * self.m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub effective_sample_size: f64,
    /// Set when the effective sample size is below [`MIN_ESS`].
    pub degenerate: bool,
    /// Paths whose payoff hit a declared clamp.
    pub clamped: usize,
}

/// Step actually used: `min(dt, 0.1 eps^(alpha - 1))`, shortened to divide `t`.
pub fn effective_dt(eps: f64, alpha: f64, t: f64, dt: f64) -> (f64, usize) {
    let cap = dt.min(0.1 * eps.powf(alpha - 1.0));
    let steps = (t / cap).ceil().max(1.0) as usize;
    (t / steps as f64, steps)
}

fn check_inputs(spec: &ModelSpec, eps: f64, t: f64, x0: &[f64], y0: &[f64], dt: f64, n_paths: usize) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1], got {eps}")));
    }
    if !(t > 0.0) || !(dt > 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput("t and dt must be positive".into()));
    }
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be >= 1".into()));
    }
    if x0.len() != spec.n || y0.len() != spec.m {
        return Err(Error::InvalidInput("initial state dimension mismatch".into()));
    }
    Ok(())
}

/// Simulates `n_paths` independent paths to time `t`.
///
/// Path `i` draws from a ChaCha8 stream keyed by `(seed, i)`, so results do
/// not depend on the thread count. When the fast process is globally OU the
/// fast component uses the exact Gaussian transition, jointly sampled with
/// the Brownian increment that drives the slow component.
#[allow(clippy::too_many_arguments)]
pub fn simulate_paths(
    spec: &ModelSpec,
    eps: f64,
    t: f64,
    x0: &[f64],
    y0: &[f64],
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<TerminalSamples> {
    check_inputs(spec, eps, t, x0, y0, dt, n_paths)?;
    let (n, m) = (spec.n, spec.m);
    let (h, n_steps) = effective_dt(eps, spec.alpha, t, dt);
    let kappa = eps.powf(1.0 - spec.alpha);
    let sx = (2.0 * eps).sqrt();
    let sy = (2.0 * kappa).sqrt();
    let sqrt_h = h.sqrt();
    // exact OU: I = int_0^h e^{-kappa (h - u)} dW_u, jointly Gaussian with dW
    let decay = (-kappa * h).exp();
    let cov = -(-kappa * h).exp_m1() / kappa;
    let var_i = -(-2.0 * kappa * h).exp_m1() / (2.0 * kappa);
    let resid = (var_i - cov * cov / h).max(0.0).sqrt();
    let exact = spec.globally_ou;

    let mut xs = vec![0.0; n_paths * n];
    let mut ys = vec![0.0; n_paths * m];
    xs.par_chunks_mut(n)
        .zip(ys.par_chunks_mut(m))
        .enumerate()
        .try_for_each(|(path, (xo, yo))| -> Result<()> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let mut x = x0.to_vec();
            let mut y = y0.to_vec();
            let mut phi = vec![0.0; n];
            let mut sig = vec![0.0; n * m];
            let mut b = vec![0.0; m];
            let mut tau = vec![0.0; m * m];
            let mut dw = vec![0.0; m];
            let mut ou = vec![0.0; m];
            for step in 0..n_steps {
                for w in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = sqrt_h * z;
                }
                spec.phi(&x, &y, &mut phi);
                spec.sigma(&x, &y, &mut sig);
                spec.tau(&y, &mut tau);
                if exact {
                    for (o, w) in ou.iter_mut().zip(&dw) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *o = cov / h * w + resid * z;
                    }
                } else {
                    spec.b(&y, &mut b);
                }
                for i in 0..n {
                    let noise: f64 = (0..m).map(|j| sig[i * m + j] * dw[j]).sum();
                    x[i] += eps * phi[i] * h + sx * noise;
                }
                for i in 0..m {
                    if exact {
                        let noise: f64 = (0..m).map(|j| tau[i * m + j] * ou[j]).sum();
                        let c = spec.b_far[i];
                        y[i] = c + (y[i] - c) * decay + sy * noise;
                    } else {
                        let noise: f64 = (0..m).map(|j| tau[i * m + j] * dw[j]).sum();
                        y[i] += kappa * b[i] * h + sy * noise;
                    }
                }
                if x.iter().chain(&y).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("path {path} at step {step}"),
                    });
                }
            }
            xo.copy_from_slice(&x);
            yo.copy_from_slice(&y);
            Ok(())
        })?;
    Ok(TerminalSamples {
        n,
        m,
        x: xs,
        y: ys,
        dt: h,
        n_steps,
    })
}

/// Log-sum-exp estimate `eps (log sum_i e^{h_i / eps} - log N)` with a
/// delta-method standard error; the value is kept inside `[min h, max h]`.
pub fn lse_estimate(hv: &[f64], eps: f64, seed: u64) -> MCEstimate {
    let n = hv.len();
    let hmax = hv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hmin = hv.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = hv.iter().map(|h| ((h - hmax) / eps).exp()).collect();
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    let mean = sum / n as f64;
    let value = (hmax + eps * mean.ln()).clamp(hmin, hmax);
    let std_error = if n > 1 {
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        eps * (var / n as f64).sqrt() / mean
    } else {
        0.0
    };
    let ess = sum * sum / sum_sq;
    MCEstimate {
        value,
        std_error,
        n_paths: n,
        seed,
        effective_sample_size: ess,
        degenerate: ess < MIN_ESS,
        clamped: 0,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_v_eps(
    spec: &ModelSpec,
    eps: f64,
    t: f64,
    x0: &[f64],
    y0: &[f64],
    h: &dyn Payoff,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if h.bound().is_none() {
        return Err(Error::Precondition("estimate_v_eps needs a payoff with a declared bound".into()));
    }
    let s = simulate_paths(spec, eps, t, x0, y0, dt, n_paths, seed)?;
    let hv: Vec<f64> = (0..n_paths).map(|i| h.eval(s.x_of(i))).collect();
    let clamped = (0..n_paths).filter(|&i| h.clamped(s.x_of(i))).count();
    if clamped > 0 {
        log::info!("{clamped} of {n_paths} payoffs clamped at eps = {eps}");
    }
    let mut est = lse_estimate(&hv, eps, seed);
    est.clamped = clamped;
    if est.degenerate {
        log::warn!(
            "effective sample size {:.1} below {MIN_ESS} at eps = {eps}",
            est.effective_sample_size
        );
    }
    Ok(est)
}

/// Target set for tail probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSet {
    /// `{x : normal . x >= offset}`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// Product of closed intervals; infinite bounds allowed.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl RegionSet {
    pub fn whole_space(n: usize) -> Self {
        RegionSet::Box {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            RegionSet::HalfSpace { normal, offset } => {
                if normal.len() != n || normal.iter().all(|v| *v == 0.0) || offset.is_nan() {
                    return Err(Error::InvalidInput("half-space needs a nonzero n-dimensional normal".into()));
                }
            }
            RegionSet::Box { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(Error::InvalidInput("box bounds must be n-dimensional".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return Err(Error::InvalidInput("box has empty interior".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            RegionSet::HalfSpace { normal, offset } => normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() >= *offset,
            RegionSet::Box { lower, upper } => x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| v >= l && v <= u),
        }
    }

    /// Euclidean distance from `x` to the set (0 inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            RegionSet::HalfSpace { normal, offset } => {
                let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
                ((offset - s) / norm).max(0.0)
            }
            RegionSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| {
                    let d = (l - v).max(v - u).max(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub eps: f64,
    pub prob: f64,
    /// Binomial standard error of `prob`.
    pub std_error: f64,
    /// `eps log prob`, or `eps log` of the upper bound when there are no hits.
    pub eps_log_prob: f64,
    pub eps_log_std_error: f64,
    pub hits: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// No hits: `prob` is 0 and `upper_bound` is the 95% rule-of-three bound.
    pub zero_hits: bool,
    pub upper_bound: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_tail_prob(
    spec: &ModelSpec,
    eps: f64,
    t: f64,
    x0: &[f64],
    y0: &[f64],
    set: &RegionSet,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<TailEstimate> {
    set.validate(spec.n)?;
    let s = simulate_paths(spec, eps, t, x0, y0, dt, n_paths, seed)?;
    let hits = (0..n_paths).filter(|&i| set.contains(s.x_of(i))).count();
    Ok(tail_from_hits(eps, hits, n_paths, seed))
}

pub fn tail_from_hits(eps: f64, hits: usize, n_paths: usize, seed: u64) -> TailEstimate {
    let n = n_paths as f64;
    let prob = hits as f64 / n;
    let std_error = (prob * (1.0 - prob) / n).sqrt();
    let zero = hits == 0;
    let upper_bound = if zero { (3.0 / n).min(1.0) } else { prob };
    let eps_log_prob = eps * upper_bound.ln();
    let eps_log_std_error = if zero { f64::INFINITY } else { eps * std_error / prob };
    TailEstimate {
        eps,
        prob,
        std_error,
        eps_log_prob,
        eps_log_std_error,
        hits,
        n_paths,
        seed,
        zero_hits: zero,
        upper_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::ConstantSigma;
    use crate::families::FnCoefficients;
    use std::sync::Arc;
    use crate::payoff::StandardPayoff;

    #[test]
    fn lse_constant_payoff_is_exact() {
        let e = lse_estimate(&[0.7; 1000], 0.1, 1);
        assert_eq!(e.value, 0.7);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.effective_sample_size, 1000.0);
    }

    #[test]
    fn deterministic_limit() {
        let c = FnCoefficients::new(1, 1)
            .with_phi(|_, _, o| o[0] = 1.0)
            .with_tau(|_, o| o[0] = 0.0);
        let spec = ModelSpec::builder(1, 1, 2.0, Arc::new(c)).theta(1.0).build().unwrap();
        let s = simulate_paths(&spec, 0.1, 1.0, &[0.0], &[0.0], 0.01, 16, 3).unwrap();
        for i in 0..16 {
            assert!((s.x_of(i)[0] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn reproducible_and_linear_mgf() {
        let spec = ConstantSigma::one_d(1.0, 1.0, 1.0).spec(2.0).unwrap();
        let h = StandardPayoff::linear_for_eps(vec![1.0], 0.1);
        let a = estimate_v_eps(&spec, 0.1, 0.1, &[0.0], &[0.0], &h, 0.01, 20_000, 9).unwrap();
        let b = estimate_v_eps(&spec, 0.1, 0.1, &[0.0], &[0.0], &h, 0.01, 20_000, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.value - 0.11).abs() < 3.0 * a.std_error + 1e-12, "{a:?}");
    }

    #[test]
    fn region_sets() {
        assert!(RegionSet::Box {
            lower: vec![1.0],
            upper: vec![0.0]
        }
        .validate(1)
        .is_err());
        let all = RegionSet::whole_space(1);
        assert!(all.contains(&[1e300]));
        let half = RegionSet::HalfSpace {
            normal: vec![1.0],
            offset: 1.0,
        };
        assert_eq!(half.distance(&[0.0]), 1.0);
        assert!(half.contains(&[1.0]));
        let t = tail_from_hits(0.1, 0, 1000, 0);
        assert!(t.zero_hits && t.upper_bound == 0.003);
    }
}

//! The full two-scale PDE for `v^eps` at `n = m = 1`.
//!
//! With `k = eps^(1 - alpha)` the equation reads
//!
//! ```text
//! v_t = eps phi v_x + eps s^2 v_xx + s^2 v_x^2
//!     + k (b v_y + t^2 v_yy) + eps^-alpha t^2 v_y^2
//!     + 2 eps^(1 - alpha/2) s t v_xy + 2 eps^(-alpha/2) s t v_x v_y
//! ```
//!
//! (`s = sigma(x, y)`, `t = tau(y)`). Each step solves the stiff `y` part
//! implicitly, line by line, with the quadratic `v_y` terms folded into its
//! drift using the previous step's gradients; the `x` terms and the mixed
//! derivative are explicit and upwinded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{locate, uniform_axis};
use crate::model::ModelSpec;
use crate::payoff::Payoff;
use crate::stencil::{axis_weights, region_for};

/// Smallest `eps` accepted.
pub const MIN_EPS: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub h_x: f64,
    pub y_max: f64,
    pub h_y: f64,
}

impl PdeGrid {
    pub fn axes(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(self.h_x > 0.0 && self.h_y > 0.0 && self.y_max > 0.0 && self.x_hi > self.x_lo) {
            return Err(Error::InvalidInput("PDE grid needs positive steps and a nonempty box".into()));
        }
        let x = uniform_axis(self.x_lo, self.x_hi, self.h_x)?;
        let y = uniform_axis(-self.y_max, self.y_max, self.h_y)?;
        if x.len() < 3 || y.len() < 3 {
            return Err(Error::InvalidInput("PDE grid needs at least 3 nodes per axis".into()));
        }
        Ok((x, y))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PdeOptions {
    /// Times at which to keep a copy of `v` (the initial and final states are always kept).
    pub snapshot_times: Vec<f64>,
    /// Drop every `tau` term and every `y` derivative. Only meaningful when
    /// `sigma` does not depend on `y`; used as a regression against the
    /// one-dimensional reference.
    pub slow_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsPdeSolution {
    pub eps: f64,
    pub alpha: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub times: Vec<f64>,
    /// `x`-major fields: `v[ix * ny + iy]`.
    pub snapshots: Vec<Vec<f64>>,
    pub dt: f64,
    pub n_steps: usize,
    /// Smallest explicit stability bound met during the run.
    pub stability_bound: f64,
    /// `(lower, upper)` sup-norm budget checked after every step.
    pub budget: (f64, f64),
}

impl EpsPdeSolution {
    pub fn final_values(&self) -> &[f64] {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    /// Bilinear interpolation of the final field.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.x, &self.y, self.final_values(), x, y)
    }
}

fn bilinear(xa: &[f64], ya: &[f64], v: &[f64], x: f64, y: f64) -> f64 {
    let ny = ya.len();
    let (i, fx) = locate(xa, x);
    let (j, fy) = locate(ya, y);
    let at = |a: usize, b: usize| v[a * ny + b];
    (1.0 - fx) * ((1.0 - fy) * at(i, j) + fy * at(i, j + 1)) + fx * ((1.0 - fy) * at(i + 1, j) + fy * at(i + 1, j + 1))
}

struct Fields {
    sigma: Vec<f64>,
    phi: Vec<f64>,
    b: Vec<f64>,
    tau: Vec<f64>,
}

/// Explicit `x` update: upwind drift, centered diffusion and the monotone
/// upwind form `max(D-^+, D+^-)^2` of the quadratic gradient term. Returns
/// the rate and the largest `|v_x|` seen.
fn x_rate(v: &[f64], ix: usize, iy: usize, nx: usize, ny: usize, h: f64, eps: f64, s: f64, phi: f64) -> (f64, f64) {
    let c = v[ix * ny + iy];
    let l = if ix > 0 { v[(ix - 1) * ny + iy] } else { v[(ix + 1) * ny + iy] };
    let r = if ix + 1 < nx { v[(ix + 1) * ny + iy] } else { v[(ix - 1) * ny + iy] };
    let dm = (c - l) / h;
    let dp = (r - c) / h;
    let drift = eps * phi;
    let adv = if drift >= 0.0 { drift * dp } else { drift * dm };
    let g = dm.max(0.0).max(-dp.min(0.0));
    let rate = adv + eps * s * s * (r - 2.0 * c + l) / (h * h) + s * s * g * g;
    (rate, dm.abs().max(dp.abs()))
}

/// Tridiagonal solve without pivoting; the systems here are strictly
/// diagonally dominant M-matrices. `diag` is overwritten.
fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    for j in 1..n {
        let w = lower[j] / diag[j - 1];
        diag[j] -= w * upper[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for j in (0..n - 1).rev() {
        rhs[j] = (rhs[j] - upper[j] * rhs[j + 1]) / diag[j];
    }
}

fn mirror(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

/// Time stepping from `v(0, x, y) = h(x)` to `t_final`.
///
/// `dt` is an upper bound; the step actually used also respects 0.9 times
/// the explicit bound `1 / (2 eps s^2 / h_x^2 + (|eps phi| + 2 s^2 |v_x|) / h_x + |c| / (h_x h_y))`
/// with `c = 2 eps^(1 - alpha/2) s t`, evaluated on the initial data. If a
/// later step violates the bound the run stops with [`Error::Unstable`].
pub fn solve_eps_pde(
    spec: &ModelSpec,
    eps: f64,
    h: &dyn Payoff,
    t_final: f64,
    grid: &PdeGrid,
    dt: f64,
    options: &PdeOptions,
) -> Result<EpsPdeSolution> {
    if spec.n != 1 || spec.m != 1 {
        return Err(Error::Precondition("the two-scale PDE solver needs n = m = 1".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1], got {eps}")));
    }
    if eps < MIN_EPS {
        return Err(Error::InvalidInput(format!("eps below {MIN_EPS} is outside this solver's range")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) || !(dt > 0.0) {
        return Err(Error::InvalidInput("T must be >= 0 and dt > 0".into()));
    }
    let (xa, ya) = grid.axes()?;
    let (nx, ny) = (xa.len(), ya.len());
    let (hx, hy) = (grid.h_x, grid.h_y);
    let alpha = spec.alpha;
    let kappa = eps.powf(1.0 - alpha);
    let quad_y = eps.powf(-alpha);
    let cross_2 = 2.0 * eps.powf(1.0 - alpha / 2.0);
    let cross_1 = 2.0 * eps.powf(-alpha / 2.0);
    let fast = !options.slow_only;

    let mut f = Fields {
        sigma: vec![0.0; nx * ny],
        phi: vec![0.0; nx * ny],
        b: vec![0.0; ny],
        tau: vec![0.0; ny],
    };
    let mut buf = [0.0];
    for (j, y) in ya.iter().enumerate() {
        spec.b(&[*y], &mut buf);
        f.b[j] = buf[0];
        spec.tau(&[*y], &mut buf);
        f.tau[j] = buf[0];
        for (i, x) in xa.iter().enumerate() {
            spec.sigma(&[*x], &[*y], &mut buf);
            f.sigma[i * ny + j] = buf[0];
            spec.phi(&[*x], &[*y], &mut buf);
            f.phi[i * ny + j] = buf[0];
        }
    }

    let mut v = vec![0.0; nx * ny];
    for (i, x) in xa.iter().enumerate() {
        let hv = h.eval(&[*x]);
        if !hv.is_finite() {
            return Err(Error::NonFinite {
                context: format!("payoff at x = {x}"),
            });
        }
        v[i * ny..(i + 1) * ny].fill(hv);
    }
    let h_min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let h_max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-2 * (h_max - h_min) + 1e-8 * (1.0 + h_max.abs());
    let budget = (h_min - slack, h_max + slack);

    let bound = |v: &[f64]| -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                let s = f.sigma[k];
                let l = v[mirror(i as isize - 1, nx) * ny + j];
                let r = v[mirror(i as isize + 1, nx) * ny + j];
                let g = ((v[k] - l).abs().max((r - v[k]).abs())) / hx;
                let mut rate = 2.0 * eps * s * s / (hx * hx) + ((eps * f.phi[k]).abs() + 2.0 * s * s * g) / hx;
                if fast {
                    rate += (cross_2 * s * f.tau[j]).abs() / (hx * hy);
                }
                worst = worst.max(rate);
            }
        }
        if worst > 0.0 {
            1.0 / worst
        } else {
            f64::INFINITY
        }
    };
    let bound0 = bound(&v);
    let n_steps = if t_final == 0.0 {
        0
    } else {
        (t_final / dt.min(0.9 * bound0)).ceil().max(1.0) as usize
    };
    let dt = if n_steps == 0 { 0.0 } else { t_final / n_steps as f64 };
    let mut stability_bound = bound0;

    let mut snap_steps: Vec<usize> = options
        .snapshot_times
        .iter()
        .filter(|&&s| s > 0.0 && s < t_final)
        .map(|s| ((s / t_final) * n_steps as f64).round() as usize)
        .collect();
    snap_steps.sort_unstable();
    snap_steps.dedup();
    let mut times = vec![0.0];
    let mut snapshots = vec![v.clone()];

    let mut rhs = vec![0.0; nx * ny];
    let mut line = vec![0.0; ny];
    let (mut lower, mut diag, mut upper) = (vec![0.0; ny], vec![0.0; ny], vec![0.0; ny]);
    for step in 1..=n_steps {
        let b_now = bound(&v);
        stability_bound = stability_bound.min(b_now);
        if dt > b_now {
            return Err(Error::Unstable(format!(
                "step {step}: dt = {dt:e} exceeds the explicit bound {b_now:e}; rerun with a smaller dt"
            )));
        }
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                let (mut rate, _) = x_rate(&v, i, j, nx, ny, hx, eps, f.sigma[k], f.phi[k]);
                if fast {
                    let ip = mirror(i as isize + 1, nx);
                    let im = mirror(i as isize - 1, nx);
                    let jp = mirror(j as isize + 1, ny);
                    let jm = mirror(j as isize - 1, ny);
                    let vxy = (v[ip * ny + jp] - v[ip * ny + jm] - v[im * ny + jp] + v[im * ny + jm]) / (4.0 * hx * hy);
                    rate += cross_2 * f.sigma[k] * f.tau[j] * vxy;
                }
                rhs[k] = v[k] + dt * rate;
            }
        }
        if fast {
            for i in 0..nx {
                let ip = mirror(i as isize + 1, nx);
                let im = mirror(i as isize - 1, nx);
                for j in 0..ny {
                    let k = i * ny + j;
                    let jp = mirror(j as isize + 1, ny);
                    let jm = mirror(j as isize - 1, ny);
                    let vy = (v[i * ny + jp] - v[i * ny + jm]) / (2.0 * hy);
                    let vx = (v[ip * ny + j] - v[im * ny + j]) / (2.0 * hx);
                    let t = f.tau[j];
                    let diff = kappa * t * t;
                    let drift = kappa * f.b[j] + quad_y * t * t * vy + cross_1 * f.sigma[k] * t * vx;
                    let (wm, wp) = axis_weights(diff, drift, hy, region_for(drift, diff, hy));
                    // mirrored ends fold both weights onto the single interior neighbor
                    diag[j] = 1.0 + dt * (wm + wp);
                    lower[j] = 0.0;
                    upper[j] = 0.0;
                    for (nb, w) in [(jm, wm), (jp, wp)] {
                        if nb < j {
                            lower[j] -= dt * w;
                        } else {
                            upper[j] -= dt * w;
                        }
                    }
                }
                line.copy_from_slice(&rhs[i * ny..(i + 1) * ny]);
                thomas(&lower, &mut diag, &upper, &mut line);
                v[i * ny..(i + 1) * ny].copy_from_slice(&line);
            }
        } else {
            v.copy_from_slice(&rhs);
        }
        for (k, val) in v.iter().enumerate() {
            if !val.is_finite() || *val < budget.0 || *val > budget.1 {
                return Err(Error::Unstable(format!(
                    "step {step}: v = {val:e} at node {k} left the budget [{:e}, {:e}]; rerun with a smaller dt",
                    budget.0, budget.1
                )));
            }
        }
        if snap_steps.binary_search(&step).is_ok() || step == n_steps {
            times.push(step as f64 * dt);
            snapshots.push(v.clone());
        }
    }
    if n_steps == 0 {
        times.push(0.0);
        snapshots.push(v);
    }
    Ok(EpsPdeSolution {
        eps,
        alpha,
        x: xa,
        y: ya,
        times,
        snapshots,
        dt,
        n_steps,
        stability_bound,
        budget,
    })
}

/// One-dimensional reference for `v_t = eps phi v_x + eps s^2 v_xx + s^2 v_x^2`
/// with constant `s`, `phi`, Neumann ends and a fixed step count.
pub fn solve_reference_1d(
    sigma: f64,
    phi: f64,
    eps: f64,
    h: &dyn Payoff,
    x: &[f64],
    t_final: f64,
    n_steps: usize,
) -> Vec<f64> {
    let nx = x.len();
    let hx = x[1] - x[0];
    let dt = t_final / n_steps as f64;
    let mut v: Vec<f64> = x.iter().map(|p| h.eval(&[*p])).collect();
    let mut next = v.clone();
    for _ in 0..n_steps {
        for i in 0..nx {
            let (rate, _) = x_rate(&v, i, 0, nx, 1, hx, eps, sigma, phi);
            next[i] = v[i] + dt * rate;
        }
        std::mem::swap(&mut v, &mut next);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::ConstantSigma;
    use crate::payoff::StandardPayoff;

    fn grid() -> PdeGrid {
        PdeGrid {
            x_lo: -3.0,
            x_hi: 3.0,
            h_x: 0.05,
            y_max: 8.0,
            h_y: 0.1,
        }
    }

    #[test]
    fn constant_payoff_stays_constant() {
        let spec = ConstantSigma::one_d(1.0, 0.5, 1.0).spec(2.0).unwrap();
        let h = StandardPayoff::Constant { value: 1.25 };
        let s = solve_eps_pde(&spec, 0.2, &h, 0.3, &grid(), 0.01, &PdeOptions::default()).unwrap();
        assert!(s.final_values().iter().all(|v| (*v - 1.25).abs() < 1e-13));
        let s0 = solve_eps_pde(&spec, 0.2, &h, 0.0, &grid(), 0.01, &PdeOptions::default()).unwrap();
        assert_eq!(s0.snapshots[0], s0.snapshots[1]);
    }

    #[test]
    fn slow_only_matches_reference() {
        let spec = ConstantSigma::one_d(0.9, 0.3, 1.0).spec(2.0).unwrap();
        let h = StandardPayoff::Tanh {
            amplitude: 1.0,
            scale: 0.7,
            center: 0.2,
        };
        let opts = PdeOptions {
            slow_only: true,
            ..Default::default()
        };
        let s = solve_eps_pde(&spec, 0.1, &h, 0.4, &grid(), 0.005, &opts).unwrap();
        let r = solve_reference_1d(0.9, 0.3, 0.1, &h, &s.x, 0.4, s.n_steps);
        let ny = s.y.len();
        for (i, want) in r.iter().enumerate() {
            for j in 0..ny {
                assert!((s.final_values()[i * ny + j] - want).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rejects_small_eps_and_wrong_dims() {
        let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(2.0).unwrap();
        let h = StandardPayoff::Constant { value: 0.0 };
        assert!(solve_eps_pde(&spec, 0.01, &h, 0.1, &grid(), 0.01, &PdeOptions::default()).is_err());
        let spec2 = ConstantSigma::new(vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0], vec![0.0])
            .unwrap()
            .spec(2.0)
            .unwrap();
        assert!(matches!(
            solve_eps_pde(&spec2, 0.1, &h, 0.1, &grid(), 0.01, &PdeOptions::default()),
            Err(Error::Precondition(_))
        ));
    }
}

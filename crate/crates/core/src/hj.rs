//! Limit Cauchy problem `v_t = H(x, Dv)`, `v(0) = h`, and the rate function
//! by dynamic programming over discrete paths.

use serde::{Deserialize, Serialize};

use crate::effham::{EffectiveHamiltonianTable, EffectiveLagrangianTable};
use crate::error::{Error, Result};
use crate::grid::{locate, TensorGrid};
use crate::payoff::Payoff;

const MAX_SNAPSHOTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HJSolution {
    pub x_grid: TensorGrid,
    /// Times of the stored snapshots, starting at 0 and ending at `T`.
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub dt: f64,
    pub n_steps: usize,
    pub cfl: f64,
    /// Per-axis Lipschitz bound of the table rows used in the time step.
    pub lipschitz: Vec<f64>,
    /// Largest per-step increase observed, divided by `dt`.
    pub max_rate: f64,
}

impl HJSolution {
    pub fn final_values(&self) -> &[f64] {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("at least the initial time")
    }

    /// Multilinear interpolation of `v(T, x)`.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.x_grid.interpolate(self.final_values(), x)
    }
}

/// Upwind extremum of `H` over the gradient interval: the max over
/// `[a, b]` when `a <= b`, the min over `[b, a]` otherwise.
fn ext_1d(axis: &[f64], row: &[f64], a: f64, b: f64) -> f64 {
    let (lo, hi, take_max) = if a <= b { (a, b, true) } else { (b, a, false) };
    let eval = |v: f64| {
        let (i, f) = locate(axis, v);
        if axis.len() == 1 {
            row[0]
        } else {
            row[i] * (1.0 - f) + row[i + 1] * f
        }
    };
    let mut best = if take_max { eval(lo).max(eval(hi)) } else { eval(lo).min(eval(hi)) };
    let start = axis.partition_point(|&p| p <= lo);
    for (p, &h) in axis[start..].iter().zip(&row[start..]) {
        if *p >= hi {
            break;
        }
        best = if take_max { best.max(h) } else { best.min(h) };
    }
    best
}

/// Nested extremum for `n = 2`: outer over the first axis (nodes inside the
/// interval plus its endpoints), inner exact along the second axis. Kinks
/// of the inner extremum between first-axis nodes are not resolved.
fn ext_2d(grid: &TensorGrid, row: &[f64], g: [f64; 4]) -> f64 {
    let [a1, b1, a2, b2] = g;
    let ax0 = grid.axis(0);
    let ax1 = grid.axis(1);
    let n1 = ax1.len();
    let (lo, hi, take_max) = if a1 <= b1 { (a1, b1, true) } else { (b1, a1, false) };
    let mut line = vec![0.0; n1];
    let mut inner = |p1: f64| {
        let (i, f) = locate(ax0, p1);
        for (j, l) in line.iter_mut().enumerate() {
            *l = if ax0.len() == 1 {
                row[j]
            } else {
                row[i * n1 + j] * (1.0 - f) + row[(i + 1) * n1 + j] * f
            };
        }
        ext_1d(ax1, &line, a2, b2)
    };
    let pick = |x: f64, y: f64| if take_max { x.max(y) } else { x.min(y) };
    let mut best = pick(inner(lo), inner(hi));
    let start = ax0.partition_point(|&p| p <= lo);
    for &p in &ax0[start..] {
        if p >= hi {
            break;
        }
        best = pick(best, inner(p));
    }
    best
}

/// Monotone upwind (Godunov-type) explicit scheme.
///
/// `dt = cfl / sum_k (L_k / h_k)` with `L_k` the largest table slope along
/// `p_k`; the last step is shortened so the run ends exactly at `T`.
/// Boundary gradients extrapolate the one-sided difference.
pub fn solve_effective_hj(
    table: &EffectiveHamiltonianTable,
    h: &dyn Payoff,
    t_final: f64,
    x_grid: &TensorGrid,
    cfl: f64,
) -> Result<HJSolution> {
    let n = table.n();
    if !(cfl > 0.0 && cfl <= 0.9) {
        return Err(Error::InvalidInput(format!("cfl must lie in (0, 0.9], got {cfl}")));
    }
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidInput(format!("T must be finite and >= 0, got {t_final}")));
    }
    if x_grid.dims() != n {
        return Err(Error::InvalidInput("x grid dimension must match the table".into()));
    }
    let steps: Vec<f64> = (0..n)
        .map(|k| {
            let a = x_grid.axis(k);
            if a.len() < 2 {
                return Err(Error::InvalidInput("HJ grid needs at least 2 nodes per axis".into()));
            }
            let h = a[1] - a[0];
            if a.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
                return Err(Error::InvalidInput("HJ grid must be uniform".into()));
            }
            Ok(h)
        })
        .collect::<Result<_>>()?;

    let nx = x_grid.len();
    let rows: Vec<Vec<f64>> = (0..nx).map(|i| table.row_at(&x_grid.point(i))).collect();
    let lipschitz = table.max_slopes();
    let speed: f64 = lipschitz.iter().zip(&steps).map(|(l, h)| l / h).sum();
    let n_steps = if t_final == 0.0 {
        0
    } else if speed > 0.0 {
        (t_final * speed / cfl).ceil().max(1.0) as usize
    } else {
        1
    };
    let dt = if n_steps == 0 { 0.0 } else { t_final / n_steps as f64 };

    let mut v: Vec<f64> = (0..nx).map(|i| h.eval(&x_grid.point(i))).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "payoff on the HJ grid".into(),
        });
    }
    let h_min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let h_max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let table_min = table.values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let table_max = table.values.iter().copied().fold(0.0, f64::max);
    let upper = h_max + t_final * table_max;
    let slack = 1e-9 * (1.0 + h_max.abs().max(h_min.abs()));

    let p_lo = table.p_grid.lower();
    let p_hi = table.p_grid.upper();
    let stride = ((n_steps as f64) / MAX_SNAPSHOTS as f64).ceil().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut snapshots = vec![v.clone()];
    let mut next = vec![0.0; nx];
    let mut max_rate: f64 = 0.0;
    let mut grad = [0.0; 4];

    for step in 1..=n_steps {
        for i in 0..nx {
            let idx = x_grid.multi_index(i);
            for k in 0..n {
                let len = x_grid.axis(k).len();
                let s = x_grid.stride(k);
                let back = (idx[k] > 0).then(|| (v[i] - v[i - s]) / steps[k]);
                let fwd = (idx[k] + 1 < len).then(|| (v[i + s] - v[i]) / steps[k]);
                let (a, b) = match (back, fwd) {
                    (Some(a), Some(b)) => (a, b),
                    (Some(a), None) => (a, a),
                    (None, Some(b)) => (b, b),
                    (None, None) => unreachable!("axes have at least 2 nodes"),
                };
                for g in [a, b] {
                    if g < p_lo[k] - 1e-12 || g > p_hi[k] + 1e-12 {
                        return Err(Error::Unstable(format!(
                            "gradient {g:.4} on axis {k} left the tabulated range [{}, {}] at t = {:.4}; \
                             widen the p grid and restart",
                            p_lo[k],
                            p_hi[k],
                            step as f64 * dt
                        )));
                    }
                }
                grad[2 * k] = a;
                grad[2 * k + 1] = b;
            }
            let ham = if n == 1 {
                ext_1d(table.p_grid.axis(0), &rows[i], grad[0], grad[1])
            } else {
                ext_2d(&table.p_grid, &rows[i], grad)
            };
            next[i] = v[i] + dt * ham;
        }
        for i in 0..nx {
            let inc = next[i] - v[i];
            if !next[i].is_finite() {
                return Err(Error::NonFinite {
                    context: format!("HJ value at node {i}, step {step}"),
                });
            }
            if inc < dt * table_min - slack {
                return Err(Error::NonMonotone(format!(
                    "v decreased by {:e} at node {i}, step {step}",
                    -inc
                )));
            }
            if next[i] < h_min - slack || next[i] > upper + slack {
                return Err(Error::BoundViolation(format!(
                    "v = {} at node {i} outside [{h_min}, {upper}]",
                    next[i]
                )));
            }
            max_rate = max_rate.max(inc / dt);
        }
        std::mem::swap(&mut v, &mut next);
        if step % stride == 0 || step == n_steps {
            times.push(step as f64 * dt);
            snapshots.push(v.clone());
        }
    }
    if n_steps == 0 {
        times.push(0.0);
        snapshots.push(v);
    }
    Ok(HJSolution {
        x_grid: x_grid.clone(),
        times,
        snapshots,
        dt,
        n_steps,
        cfl,
        lipschitz,
        max_rate,
    })
}

/// `sup_y { h(y) - (x - y)^2 / (4 c t) }` on a uniform grid of 2e5 + 1
/// points around `x`.
pub fn hopf_lax_oracle(c: f64, h: &dyn Payoff, t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t must be > 0, got {t}")));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("c must be > 0, got {c}")));
    }
    let half = (20.0 * (c * t).sqrt()).max(10.0);
    let count = 100_000;
    let step = half / count as f64;
    let best = (-(count as i64)..=count as i64)
        .map(|k| {
            let y = x + k as f64 * step;
            h.eval(&[y]) - (x - y) * (x - y) / (4.0 * c * t)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFunctionResult {
    pub x0: Vec<f64>,
    pub x: Vec<f64>,
    pub t: f64,
    pub rate: f64,
    /// `(time, position)` of the optimal discrete trajectory.
    pub path: Vec<(f64, Vec<f64>)>,
}

/// Minimal action `sum_k (t/K) L(x_k, (x_{k+1} - x_k) K / t)` over paths
/// whose intermediate positions are nodes of `state_grid`.
///
/// Ties keep the predecessor with the smallest step speed, then the lowest
/// node index.
pub fn rate_function(
    lag: &EffectiveLagrangianTable,
    state_grid: &TensorGrid,
    x0: &[f64],
    x: &[f64],
    t: f64,
    k_steps: usize,
) -> Result<RateFunctionResult> {
    let n = state_grid.dims();
    if k_steps < 8 {
        return Err(Error::InvalidInput(format!("K_steps must be >= 8, got {k_steps}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t must be > 0, got {t}")));
    }
    if x0.len() != n || x.len() != n || lag.q_grid.dims() != n {
        return Err(Error::InvalidInput("dimension mismatch in rate_function".into()));
    }
    if !state_grid.contains(x0) || !state_grid.contains(x) {
        return Err(Error::InvalidInput("x0 and x must lie in the state grid box".into()));
    }
    let tau = t / k_steps as f64;
    let q_lo = lag.q_grid.lower();
    let q_hi = lag.q_grid.upper();
    let nodes: Vec<Vec<f64>> = (0..state_grid.len()).map(|i| state_grid.point(i)).collect();

    let step_cost = |from: &[f64], to: &[f64]| -> Option<(f64, f64)> {
        let q: Vec<f64> = from.iter().zip(to).map(|(a, b)| (b - a) / tau).collect();
        if q.iter().enumerate().any(|(k, v)| *v < q_lo[k] - 1e-12 || *v > q_hi[k] + 1e-12) {
            return None;
        }
        let l = lag.lookup(from, &q)?;
        let speed = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        Some((tau * l, speed))
    };
    // (cost, speed of the incoming step, predecessor)
    type Cell = Option<(f64, f64, usize)>;
    let better = |cand: (f64, f64, usize), cur: Cell| -> bool {
        match cur {
            None => true,
            Some((c, s, j)) => {
                let tol = 1e-12 * (1.0 + c.abs());
                if cand.0 < c - tol {
                    true
                } else if cand.0 > c + tol {
                    false
                } else {
                    cand.1 < s || (cand.1 == s && cand.2 < j)
                }
            }
        }
    };

    // slice 1: direct from x0
    let mut layers: Vec<Vec<Cell>> = Vec::with_capacity(k_steps);
    let first: Vec<Cell> = nodes
        .iter()
        .map(|p| step_cost(x0, p).map(|(c, s)| (c, s, 0)))
        .collect();
    layers.push(first);
    for _ in 2..k_steps {
        let prev = layers.last().expect("nonempty");
        let mut cur: Vec<Cell> = vec![None; nodes.len()];
        for (j, pj) in prev.iter().enumerate() {
            let Some((cj, _, _)) = *pj else { continue };
            for (i, slot) in cur.iter_mut().enumerate() {
                if let Some((c, s)) = step_cost(&nodes[j], &nodes[i]) {
                    let cand = (cj + c, s, j);
                    if better(cand, *slot) {
                        *slot = Some(cand);
                    }
                }
            }
        }
        layers.push(cur);
    }
    let last = layers.last().expect("nonempty");
    let mut end: Cell = None;
    for (j, pj) in last.iter().enumerate() {
        let Some((cj, _, _)) = *pj else { continue };
        if let Some((c, s)) = step_cost(&nodes[j], x) {
            let cand = (cj + c, s, j);
            if better(cand, end) {
                end = Some(cand);
            }
        }
    }
    let Some((rate, _, mut j)) = end else {
        return Err(Error::Unreachable(
            "target unreachable at this slope range".into(),
        ));
    };
    let mut path = vec![(t, x.to_vec())];
    for k in (0..layers.len()).rev() {
        path.push(((k + 1) as f64 * tau, nodes[j].clone()));
        j = layers[k][j].expect("on the optimal path").2;
    }
    path.push((0.0, x0.to_vec()));
    path.reverse();
    Ok(RateFunctionResult {
        x0: x0.to_vec(),
        x: x.to_vec(),
        t,
        rate: rate.max(0.0),
        path,
    })
}

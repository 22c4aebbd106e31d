//! Discounted ergodic cell problems on a truncated fast grid.
//!
//! Supercritical: the linear problem `delta w - b.Dw - tr(tau tau^T D^2 w) = |sigma^T p|^2`.
//! Critical: `delta w - tr(tau tau^T D^2 w) - |tau^T Dw|^2 - (b + 2 tau sigma^T p).Dw = |sigma^T p|^2`,
//! solved by Howard policy iteration on `|tau^T q|^2 = sup_a {2 (tau a).q - |a|^2}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FastGrid;
use crate::linalg::{norm_inf, relative_residual, solve_refined, BandMatrix};
use crate::measure::fast_generator_coefs;
use crate::model::{ModelSpec, Regime};
use crate::stencil::{self, axis_weights, region_for, region_interval, NodeCoef, Region};

pub const DEFAULT_DELTAS: [f64; 7] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
const LINEAR_TOL: f64 = 1e-10;

/// Discrete `w_delta` for one `(xbar, pbar, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub regime: Regime,
    pub xbar: Vec<f64>,
    pub pbar: Vec<f64>,
    pub delta: f64,
    pub grid: FastGrid,
    pub w: Vec<f64>,
    /// Normalized residual `|r|_inf / (|A|_inf |w|_inf + |rhs|_inf)`.
    pub residual_inf: f64,
    pub lambda_est: f64,
    pub iterations: usize,
    /// Normalized residual after each policy evaluation (one entry when linear).
    pub residual_history: Vec<f64>,
}

/// Normalized corrector `w - w(0)` with its ergodic constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorField {
    pub regime: Regime,
    pub xbar: Vec<f64>,
    pub pbar: Vec<f64>,
    pub grid: FastGrid,
    pub w: Vec<f64>,
    pub lambda: f64,
    pub ref_node: usize,
    /// `(delta_i, delta_i w_i(ref))` for every delta of the sequence.
    pub lambda_sequence: Vec<(f64, f64)>,
    /// `max_i |delta_i w_i(ref) - delta_{i+1} w_{i+1}(ref)|`.
    pub cauchy_increment: f64,
    /// Increment between the two smallest deltas; the per-node accuracy
    /// estimate carried into tables.
    pub node_diagnostic: f64,
    pub delta_min: f64,
    pub residual_inf: f64,
}

/// Value of `|sigma^T p|^2` at every node, plus min and max.
pub fn forcing_field(spec: &ModelSpec, xbar: &[f64], pbar: &[f64], grid: &FastGrid) -> Result<Vec<f64>> {
    let mut y = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|i| {
            grid.point_into(i, &mut y);
            let f = spec.forcing(xbar, &y, pbar);
            if f.is_finite() {
                Ok(f)
            } else {
                Err(Error::NonFinite {
                    context: format!("forcing at y = {y:?}"),
                })
            }
        })
        .collect()
}

fn check_inputs(spec: &ModelSpec, xbar: &[f64], pbar: &[f64], delta: f64, grid: &FastGrid) -> Result<()> {
    if xbar.len() != spec.n || pbar.len() != spec.n {
        return Err(Error::InvalidInput("xbar and pbar must have length n".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Precondition(format!("delta must be > 0, got {delta}")));
    }
    if grid.dim() != spec.m {
        return Err(Error::InvalidInput("grid dimension differs from m".into()));
    }
    if grid.y_max() <= spec.r_ergodic.max(spec.r1) {
        return Err(Error::Precondition(format!(
            "grid half-width {} must exceed max(R, R1) = {}",
            grid.y_max(),
            spec.r_ergodic.max(spec.r1)
        )));
    }
    Ok(())
}

/// `min f <= delta w <= max f` at every node (relative slack for roundoff).
fn check_discount_bounds(w: &[f64], delta: f64, f: &[f64]) -> Result<()> {
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-9 * hi.abs().max(lo.abs()).max(1e-300);
    for (i, wi) in w.iter().enumerate() {
        let v = delta * wi;
        if v < lo - slack || v > hi + slack {
            return Err(Error::BoundViolation(format!(
                "delta w = {v} at node {i} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn shifted(g: &BandMatrix, delta: f64) -> BandMatrix {
    let n = g.dim();
    let (kl, ku) = g.bandwidths();
    let mut a = BandMatrix::zeros(n, kl, ku);
    for i in 0..n {
        for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
            a.set(i, j, -g.get(i, j));
        }
        a.add(i, i, delta);
    }
    a
}

/// Linear supercritical cell problem.
pub fn solve_cell_super(
    spec: &ModelSpec,
    xbar: &[f64],
    pbar: &[f64],
    delta: f64,
    grid: &FastGrid,
) -> Result<CellSolution> {
    check_inputs(spec, xbar, pbar, delta, grid)?;
    let f = forcing_field(spec, xbar, pbar, grid)?;
    let g = stencil::assemble(grid, &fast_generator_coefs(spec, grid)?)?;
    let a = shifted(&g, delta);
    let w = solve_refined(&a, &f)?;
    let residual = relative_residual(&a, &w, &f);
    if residual > LINEAR_TOL {
        return Err(Error::NoConvergence {
            context: format!("supercritical cell solve, delta = {delta}"),
            iterations: 2,
            residual,
        });
    }
    check_discount_bounds(&w, delta, &f)?;
    let c = grid.center();
    Ok(CellSolution {
        regime: Regime::Supercritical,
        xbar: xbar.to_vec(),
        pbar: pbar.to_vec(),
        delta,
        grid: grid.clone(),
        lambda_est: delta * w[c],
        w,
        residual_inf: residual,
        iterations: 1,
        residual_history: vec![residual],
    })
}

/// Frozen data of the critical problem at every node (diagonal `tau`).
struct CriticalSetup {
    m: usize,
    h: f64,
    diff: Vec<[f64; 2]>,
    tau: Vec<[f64; 2]>,
    beta: Vec<[f64; 2]>,
    f: Vec<f64>,
}

impl CriticalSetup {
    fn new(spec: &ModelSpec, xbar: &[f64], pbar: &[f64], grid: &FastGrid) -> Result<Self> {
        let m = grid.dim();
        let n = grid.len();
        let mut y = vec![0.0; m];
        let mut t = vec![0.0; m * m];
        let mut b = vec![0.0; m];
        let mut diff = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        let mut beta = Vec::with_capacity(n);
        for i in 0..n {
            grid.point_into(i, &mut y);
            spec.tau(&y, &mut t);
            spec.b(&y, &mut b);
            if m == 2 {
                let scale = t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if t[1].abs() > 1e-12 * scale || t[2].abs() > 1e-12 * scale {
                    return Err(Error::Precondition(format!(
                        "critical cell problems with m = 2 need diagonal tau (tau = {t:?} at y = {y:?})"
                    )));
                }
            }
            let corr = spec.correlation_drift(xbar, &y, pbar);
            let mut d = [0.0; 2];
            let mut tk = [0.0; 2];
            let mut bk = [0.0; 2];
            for k in 0..m {
                tk[k] = t[k * m + k];
                d[k] = tk[k] * tk[k];
                bk[k] = b[k] + 2.0 * corr[k];
            }
            if tk.iter().chain(&bk).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("critical coefficients at y = {y:?}"),
                });
            }
            diff.push(d);
            tau.push(tk);
            beta.push(bk);
        }
        Ok(Self {
            m,
            h: grid.spacing(),
            diff,
            tau,
            beta,
            f: forcing_field(spec, xbar, pbar, grid)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AxisControl {
    a: f64,
    region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sense {
    /// `min_a { -(G_a w) + |a|^2 }`: the concave form.
    Min,
    /// `max_a { -(G_a u) - |a|^2 }`: the convex form.
    Max,
}

const REGIONS: [Region; 3] = [Region::Centered, Region::Forward, Region::Backward];

/// Best control along one axis. Returns `(cost, control)` where cost is the
/// axis share of `-(G_a w)_i +/- a^2`.
#[allow(clippy::too_many_arguments)]
fn axis_optimum(
    diff: f64,
    tau: f64,
    beta: f64,
    h: f64,
    wm: f64,
    w0: f64,
    wp: f64,
    sense: Sense,
) -> (f64, AxisControl) {
    let sgn = match sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let cost = |a: f64, region: Region| {
        let d = beta + 2.0 * tau * a;
        let (cm, cp) = axis_weights(diff, d, h, region);
        -(cm * (wm - w0) + cp * (wp - w0)) + sgn * a * a
    };
    let mut best: Option<(f64, AxisControl)> = None;
    for region in REGIONS {
        let (lo, hi) = region_interval(region, diff, h);
        let slope = match region {
            Region::Centered => (wp - wm) / (2.0 * h),
            Region::Forward => (wp - w0) / h,
            Region::Backward => (w0 - wm) / h,
        };
        let a = if tau == 0.0 {
            if region != region_for(beta, diff, h) {
                continue;
            }
            0.0
        } else {
            let (mut a_lo, mut a_hi) = ((lo - beta) / (2.0 * tau), (hi - beta) / (2.0 * tau));
            if a_lo > a_hi {
                std::mem::swap(&mut a_lo, &mut a_hi);
            }
            (sgn * tau * slope).clamp(a_lo, a_hi)
        };
        let c = cost(a, region);
        let better = match (best, sense) {
            (None, _) => true,
            (Some((b, _)), Sense::Min) => c < b,
            (Some((b, _)), Sense::Max) => c > b,
        };
        if better {
            best = Some((c, AxisControl { a, region }));
        }
    }
    best.expect("the centered region is never empty")
}

/// Per-node optimal control and the value of the optimized operator.
fn optimize_node(
    setup: &CriticalSetup,
    grid: &FastGrid,
    w: &[f64],
    i: usize,
    sense: Sense,
) -> (f64, [AxisControl; 2]) {
    let mut total = 0.0;
    let mut ctrl = [AxisControl {
        a: 0.0,
        region: Region::Centered,
    }; 2];
    for k in 0..setup.m {
        let wm = w[grid.mirrored_neighbor(i, k, -1)];
        let wp = w[grid.mirrored_neighbor(i, k, 1)];
        let (c, a) = axis_optimum(
            setup.diff[i][k],
            setup.tau[i][k],
            setup.beta[i][k],
            setup.h,
            wm,
            w[i],
            wp,
            sense,
        );
        total += c;
        ctrl[k] = a;
    }
    (total, ctrl)
}

fn policy_system(setup: &CriticalSetup, grid: &FastGrid, policy: &[[AxisControl; 2]], delta: f64) -> Result<(BandMatrix, Vec<f64>)> {
    let n = grid.len();
    let mut coefs = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = NodeCoef::default();
        let mut r = [Region::Centered; 2];
        let mut a2 = 0.0;
        for k in 0..setup.m {
            let p = policy[i][k];
            c.diff[2 * k] = setup.diff[i][k];
            c.drift[k] = setup.beta[i][k] + 2.0 * setup.tau[i][k] * p.a;
            r[k] = p.region;
            a2 += p.a * p.a;
        }
        coefs.push(c);
        regions.push(r);
        rhs.push(setup.f[i] - a2);
    }
    let g = stencil::assemble_with_regions(grid, &coefs, &regions)?;
    Ok((shifted(&g, delta), rhs))
}

/// Howard iteration for the critical cell problem.
pub fn solve_cell_critical(
    spec: &ModelSpec,
    xbar: &[f64],
    pbar: &[f64],
    delta: f64,
    grid: &FastGrid,
    tol: f64,
    max_iter: usize,
) -> Result<CellSolution> {
    if spec.alpha != 2.0 {
        return Err(Error::Precondition("critical cell problem requires alpha = 2".into()));
    }
    solve_critical_from(spec, xbar, pbar, delta, grid, tol, max_iter, None)
}

#[allow(clippy::too_many_arguments)]
fn solve_critical_from(
    spec: &ModelSpec,
    xbar: &[f64],
    pbar: &[f64],
    delta: f64,
    grid: &FastGrid,
    tol: f64,
    max_iter: usize,
    warm: Option<&[f64]>,
) -> Result<CellSolution> {
    check_inputs(spec, xbar, pbar, delta, grid)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidInput("tol must be > 0 and max_iter >= 1".into()));
    }
    let setup = CriticalSetup::new(spec, xbar, pbar, grid)?;
    let n = grid.len();
    let mut policy: Vec<[AxisControl; 2]> = match warm {
        Some(w0) => (0..n).map(|i| optimize_node(&setup, grid, w0, i, Sense::Min).1).collect(),
        None => {
            let zero = vec![0.0; n];
            (0..n).map(|i| optimize_node(&setup, grid, &zero, i, Sense::Min).1).collect()
        }
    };
    let mut w_prev: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    for iter in 1..=max_iter {
        let (a, rhs) = policy_system(&setup, grid, &policy, delta)?;
        let w = solve_refined(&a, &rhs)?;
        if let Some(prev) = &w_prev {
            let scale = norm_inf(&w).max(norm_inf(prev)).max(1.0);
            if let Some(i) = (0..n).find(|&i| w[i] < prev[i] - 1e-9 * scale) {
                return Err(Error::NonMonotone(format!(
                    "policy value decreased at node {i} ({} -> {}); refine the grid",
                    prev[i], w[i]
                )));
            }
        }
        let mut max_r: f64 = 0.0;
        let mut new_policy = Vec::with_capacity(n);
        for i in 0..n {
            let (val, ctrl) = optimize_node(&setup, grid, &w, i, Sense::Min);
            max_r = max_r.max((delta * w[i] + val - setup.f[i]).abs());
            new_policy.push(ctrl);
        }
        let scale = a.norm_inf() * norm_inf(&w) + norm_inf(&rhs);
        let residual = if scale > 0.0 { max_r / scale } else { max_r };
        history.push(residual);
        if !residual.is_finite() {
            return Err(Error::NonFinite {
                context: format!("Howard iteration {iter}"),
            });
        }
        let repeated = new_policy == policy;
        if residual <= tol || repeated {
            check_discount_bounds(&w, delta, &setup.f)?;
            let c = grid.center();
            return Ok(CellSolution {
                regime: Regime::Critical,
                xbar: xbar.to_vec(),
                pbar: pbar.to_vec(),
                delta,
                grid: grid.clone(),
                lambda_est: delta * w[c],
                w,
                residual_inf: residual,
                iterations: iter,
                residual_history: history,
            });
        }
        policy = new_policy;
        w_prev = Some(w);
    }
    Err(Error::NoConvergence {
        context: format!("Howard iteration for the critical cell problem, delta = {delta}"),
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Either regime, with the default Howard tolerances.
pub fn solve_cell(
    spec: &ModelSpec,
    regime: Regime,
    xbar: &[f64],
    pbar: &[f64],
    delta: f64,
    grid: &FastGrid,
) -> Result<CellSolution> {
    match regime {
        Regime::Supercritical => solve_cell_super(spec, xbar, pbar, delta, grid),
        Regime::Critical => solve_cell_critical(spec, xbar, pbar, delta, grid, DEFAULT_TOL, DEFAULT_MAX_ITER),
    }
}

fn check_regime(spec: &ModelSpec, regime: Regime) -> Result<()> {
    if spec.regime() != regime {
        return Err(Error::Precondition(format!(
            "model has alpha = {} ({}), requested {regime}",
            spec.alpha,
            spec.regime()
        )));
    }
    Ok(())
}

/// Vanishing-discount limit normalized at the grid origin.
pub fn vanishing_discount(
    spec: &ModelSpec,
    xbar: &[f64],
    pbar: &[f64],
    regime: Regime,
    deltas: &[f64],
    grid: &FastGrid,
) -> Result<CorrectorField> {
    vanishing_discount_at(spec, xbar, pbar, regime, deltas, grid, grid.center())
}

/// Vanishing-discount limit with `lambda` read at `ref_node`.
///
/// `lambda` is the intercept of the least-squares line through the three
/// smallest `(delta, delta w_delta(ref))` pairs.
pub fn vanishing_discount_at(
    spec: &ModelSpec,
    xbar: &[f64],
    pbar: &[f64],
    regime: Regime,
    deltas: &[f64],
    grid: &FastGrid,
    ref_node: usize,
) -> Result<CorrectorField> {
    if deltas.len() < 4 || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition(
            "delta sequence must be strictly decreasing with at least 4 entries".into(),
        ));
    }
    if ref_node >= grid.len() {
        return Err(Error::InvalidInput("reference node outside the grid".into()));
    }
    check_regime(spec, regime)?;
    let mut seq = Vec::with_capacity(deltas.len());
    let mut last: Option<CellSolution> = None;
    let mut worst_residual: f64 = 0.0;
    for &d in deltas {
        let sol = match regime {
            Regime::Supercritical => solve_cell_super(spec, xbar, pbar, d, grid)?,
            Regime::Critical => {
                // warm start from the previous corrector shape
                let warm = last.as_ref().map(|s| s.w.clone());
                solve_critical_from(spec, xbar, pbar, d, grid, DEFAULT_TOL, DEFAULT_MAX_ITER, warm.as_deref())?
            }
        };
        worst_residual = worst_residual.max(sol.residual_inf);
        seq.push((d, d * sol.w[ref_node]));
        last = Some(sol);
    }
    let increments: Vec<f64> = seq.windows(2).map(|p| (p[0].1 - p[1].1).abs()).collect();
    // increments below the solve's roundoff level (condition ~ |G| / delta) are noise
    let floor = 1e-8 * seq.iter().fold(1.0f64, |a, s| a.max(s.1.abs()));
    if increments.windows(2).any(|p| p[1] > p[0] + floor) {
        return Err(Error::NoConvergence {
            context: format!(
                "vanishing discount is not Cauchy (increments {increments:?}); use smaller delta or a larger grid"
            ),
            iterations: deltas.len(),
            residual: increments.iter().copied().fold(0.0, f64::max),
        });
    }
    let tail = &seq[seq.len() - 3..];
    let lambda = linear_intercept(tail);
    let sol = last.expect("at least four solves");
    let w0 = sol.w[ref_node];
    Ok(CorrectorField {
        regime,
        xbar: xbar.to_vec(),
        pbar: pbar.to_vec(),
        grid: grid.clone(),
        w: sol.w.iter().map(|v| v - w0).collect(),
        lambda,
        ref_node,
        cauchy_increment: increments.iter().copied().fold(0.0, f64::max),
        node_diagnostic: *increments.last().unwrap(),
        delta_min: sol.delta,
        residual_inf: worst_residual,
        lambda_sequence: seq,
    })
}

/// Intercept at 0 of the least-squares line through `(x, y)` pairs.
pub fn linear_intercept(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return my;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    my - sxy / sxx * mx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `(delta, max centered-difference gradient norm)`.
    pub rows: Vec<(f64, f64)>,
    pub ratio: f64,
    pub pass: bool,
}

/// Largest centered-difference gradient norm over interior nodes.
pub fn max_gradient(grid: &FastGrid, w: &[f64]) -> f64 {
    let h = grid.spacing();
    (0..grid.len())
        .filter(|&i| !grid.is_boundary(i))
        .map(|i| {
            (0..grid.dim())
                .map(|k| {
                    let g = (w[grid.mirrored_neighbor(i, k, 1)] - w[grid.mirrored_neighbor(i, k, -1)]) / (2.0 * h);
                    g * g
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Compares the maximal discrete gradient across discount factors; passes
/// iff `max / min <= 1.1`.
pub fn lipschitz_report(solutions: &[CellSolution]) -> Result<LipschitzReport> {
    if solutions.len() < 3 {
        return Err(Error::Precondition("need at least 3 cell solutions".into()));
    }
    let first = &solutions[0];
    if solutions
        .iter()
        .any(|s| s.grid != first.grid || s.xbar != first.xbar || s.pbar != first.pbar)
    {
        return Err(Error::Precondition("solutions must share (xbar, pbar, grid)".into()));
    }
    let mut ds: Vec<f64> = solutions.iter().map(|s| s.delta).collect();
    ds.sort_by(f64::total_cmp);
    if ds.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Precondition("deltas must be distinct".into()));
    }
    if ds[ds.len() - 1] / ds[0] < 100.0 * (1.0 - 1e-12) {
        return Err(Error::Precondition("deltas must span at least two decades".into()));
    }
    let rows: Vec<(f64, f64)> = solutions.iter().map(|s| (s.delta, max_gradient(&s.grid, &s.w))).collect();
    let hi = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let ratio = if hi <= 1e-12 {
        1.0
    } else if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    };
    Ok(LipschitzReport {
        rows,
        ratio,
        pass: ratio <= 1.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub c_bar: f64,
    pub c_bar_half: f64,
    pub pass: bool,
}

/// Smallest `C` with `|w(y) - w(0)| <= C (1 + log sqrt(|y|^2 + 1))` over the
/// nodes inside `radius` (sup-norm box).
pub fn fit_log_growth(grid: &FastGrid, w: &[f64], radius: f64) -> f64 {
    let w0 = w[grid.center()];
    let mut y = vec![0.0; grid.dim()];
    let mut c: f64 = 0.0;
    for (i, wi) in w.iter().enumerate() {
        grid.point_into(i, &mut y);
        if y.iter().any(|v| v.abs() > radius + 1e-12) {
            continue;
        }
        let r2: f64 = y.iter().map(|v| v * v).sum();
        c = c.max((wi - w0).abs() / (1.0 + 0.5 * (r2 + 1.0).ln()));
    }
    c
}

/// Log-growth fit on the full box and on its half; passes iff the two
/// agree within 20%.
pub fn growth_check(grid: &FastGrid, w: &[f64], r_ergodic: f64) -> Result<GrowthReport> {
    if grid.y_max() < 4.0 * r_ergodic {
        return Err(Error::Precondition(format!(
            "growth check needs Y_max >= 4 R = {}",
            4.0 * r_ergodic
        )));
    }
    let c_bar = fit_log_growth(grid, w, grid.y_max());
    let c_bar_half = fit_log_growth(grid, w, 0.5 * grid.y_max());
    Ok(GrowthReport {
        c_bar,
        c_bar_half,
        pass: relative_change(c_bar_half, c_bar) <= 0.2,
    })
}

/// `|b - a| / |a|`, treating two vanishing values as unchanged.
pub fn relative_change(a: f64, b: f64) -> f64 {
    let d = (b - a).abs();
    if d <= 1e-12 {
        0.0
    } else if a.abs() > 0.0 {
        d / a.abs()
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub lambda: f64,
    pub lambda_doubled: f64,
    pub lambda_change: f64,
    pub lambda_pass: bool,
    pub c_bar: f64,
    pub c_bar_doubled: f64,
    pub c_bar_change: f64,
    pub c_bar_pass: bool,
}

/// Re-solves on the box of twice the half-width: `lambda` must move by less
/// than 1e-3 and the log-growth constant by at most 20%.
pub fn domain_doubling_check(
    spec: &ModelSpec,
    xbar: &[f64],
    pbar: &[f64],
    regime: Regime,
    deltas: &[f64],
    grid: &FastGrid,
) -> Result<DoublingReport> {
    let big = grid.doubled()?;
    let a = vanishing_discount(spec, xbar, pbar, regime, deltas, grid)?;
    let b = vanishing_discount(spec, xbar, pbar, regime, deltas, &big)?;
    let c_bar = fit_log_growth(grid, &a.w, grid.y_max());
    let c_bar_doubled = fit_log_growth(&big, &b.w, big.y_max());
    let lambda_change = (a.lambda - b.lambda).abs();
    let c_bar_change = relative_change(c_bar, c_bar_doubled);
    Ok(DoublingReport {
        lambda: a.lambda,
        lambda_doubled: b.lambda,
        lambda_change,
        lambda_pass: lambda_change < 1e-3,
        c_bar,
        c_bar_doubled,
        c_bar_change,
        c_bar_pass: c_bar_change <= 0.2,
    })
}

/// Principal eigenvalue of `u -> tau^2 u'' + (b + 2 tau sigma^T p) u' + |sigma^T p|^2 u`
/// (the log transform of the critical problem) by shifted inverse iteration.
pub fn hopf_cole_crosscheck(spec: &ModelSpec, xbar: &[f64], pbar: &[f64], grid: &FastGrid) -> Result<f64> {
    if spec.alpha != 2.0 {
        return Err(Error::Precondition("Hopf-Cole cross-check requires alpha = 2".into()));
    }
    if spec.m != 1 || grid.dim() != 1 {
        return Err(Error::Precondition("Hopf-Cole cross-check is 1D only".into()));
    }
    check_inputs(spec, xbar, pbar, 1.0, grid)?;
    let setup = CriticalSetup::new(spec, xbar, pbar, grid)?;
    let n = grid.len();
    let coefs: Vec<NodeCoef> = (0..n).map(|i| NodeCoef::one_d(setup.diff[i][0], setup.beta[i][0])).collect();
    let mut a = stencil::assemble(grid, &coefs)?;
    for i in 0..n {
        a.add(i, i, setup.f[i]);
    }
    let scale = a.norm_inf().max(1.0);
    let f_max = setup.f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut u = vec![1.0; n];
    let mut s = f_max + 1.0;
    for _ in 0..10_000 {
        let lu = shifted(&a, s).factorize()?;
        lu.solve_in_place(&mut u);
        if u.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::NonFinite {
                context: "Hopf-Cole inverse iteration lost positivity".into(),
            });
        }
        let top = norm_inf(&u);
        u.iter_mut().for_each(|v| *v /= top);
        let au = a.mul_vec(&u);
        let ratios = au.iter().zip(&u).map(|(x, y)| x / y);
        let (lo, hi) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r), h.max(r)));
        if hi - lo <= 1e-12 * scale {
            return Ok(0.5 * (lo + hi));
        }
        s = hi + 1e-9 * scale.max(hi.abs());
    }
    Err(Error::NoConvergence {
        context: "Hopf-Cole principal eigenvalue".into(),
        iterations: 10_000,
        residual: f64::NAN,
    })
}

/// Sup-norm of the discrete concave-form residual
/// `lambda + min_a {-(G_a w) + |a|^2} - |sigma^T p|^2` of a corrector.
pub fn concave_residual(corr: &CorrectorField, spec: &ModelSpec) -> Result<f64> {
    residual_in_form(corr, spec, &corr.w, Sense::Min)
}

/// Sup-norm of the convex-form residual of `-w`:
/// `-lambda - tr(tau tau^T D^2 u) + H(y, Du) + |sigma^T p|^2` with
/// `H(y, q) = -(b + 2 tau sigma^T p).q + |tau^T q|^2`, discretized through
/// its own Bellman maximization.
pub fn convex_flip_residual(corr: &CorrectorField, spec: &ModelSpec) -> Result<f64> {
    let u: Vec<f64> = corr.w.iter().map(|v| -v).collect();
    residual_in_form(corr, spec, &u, Sense::Max)
}

fn residual_in_form(corr: &CorrectorField, spec: &ModelSpec, field: &[f64], sense: Sense) -> Result<f64> {
    if corr.regime != Regime::Critical {
        return Err(Error::Precondition("the convex flip concerns the critical regime".into()));
    }
    let grid = &corr.grid;
    let setup = CriticalSetup::new(spec, &corr.xbar, &corr.pbar, grid)?;
    let mut r: f64 = 0.0;
    for i in 0..grid.len() {
        let (val, _) = optimize_node(&setup, grid, field, i, sense);
        let ri = match sense {
            Sense::Min => corr.lambda + val - setup.f[i],
            Sense::Max => -corr.lambda + val + setup.f[i],
        };
        r = r.max(ri.abs());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{BumpSigma, ConstantSigma};

    fn grid1() -> FastGrid {
        FastGrid::new(1, 8.0, 0.05).unwrap()
    }

    #[test]
    fn constant_sigma_gives_constant_w() {
        let grid = grid1();
        let s = ConstantSigma::one_d(1.2, 0.0, 1.0);
        let sup = solve_cell_super(&s.spec(3.0).unwrap(), &[0.0], &[1.5], 1e-2, &grid).unwrap();
        let crit = solve_cell_critical(&s.spec(2.0).unwrap(), &[0.0], &[1.5], 1e-2, &grid, 1e-10, 50).unwrap();
        let target = (1.2f64 * 1.5).powi(2) / 1e-2;
        for sol in [&sup, &crit] {
            assert!(sol.w.iter().all(|v| (v - target).abs() < 1e-8 * target));
        }
    }

    #[test]
    fn zero_momentum_gives_zero() {
        let grid = grid1();
        let spec = BumpSigma::one_d(1.0, 1.0).spec(2.0).unwrap();
        let sol = solve_cell_critical(&spec, &[0.0], &[0.0], 1e-3, &grid, 1e-10, 50).unwrap();
        assert!(sol.w.iter().all(|v| *v == 0.0));
        assert_eq!(sol.lambda_est, 0.0);
        let corr = vanishing_discount(&spec, &[0.0], &[0.0], Regime::Critical, &DEFAULT_DELTAS, &grid).unwrap();
        assert_eq!(corr.lambda, 0.0);
        assert!(corr.w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn supercritical_bump_value() {
        let grid = grid1();
        let spec = BumpSigma::one_d(1.0, 1.0).spec(3.0).unwrap();
        let sol = solve_cell_super(&spec, &[0.0], &[1.0], 1e-3, &grid).unwrap();
        let exact = 1.0 + 3f64.sqrt().recip();
        assert!((sol.lambda_est - exact).abs() < 5e-3);
        let f = forcing_field(&spec, &[0.0], &[1.0], &grid).unwrap();
        let (lo, hi) = (f.iter().copied().fold(f64::INFINITY, f64::min), f.iter().copied().fold(0.0, f64::max));
        assert!(sol.w.iter().all(|w| 1e-3 * w >= lo - 1e-12 && 1e-3 * w <= hi + 1e-12));
    }

    #[test]
    fn critical_matches_hopf_cole() {
        let grid = grid1();
        let spec = BumpSigma::one_d(1.0, 1.0).spec(2.0).unwrap();
        let sol = solve_cell_critical(&spec, &[0.0], &[1.0], 1e-4, &grid, 1e-10, 100).unwrap();
        let hc = hopf_cole_crosscheck(&spec, &[0.0], &[1.0], &grid).unwrap();
        assert!((sol.lambda_est - hc).abs() < 1e-3, "{} vs {hc}", sol.lambda_est);
        assert!(sol.residual_inf <= 1e-10);
    }

    #[test]
    fn hopf_cole_trivial_cases() {
        let grid = grid1();
        let c = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(2.0).unwrap();
        assert!((hopf_cole_crosscheck(&c, &[0.0], &[1.0], &grid).unwrap() - 1.0).abs() < 1e-10);
        assert!(hopf_cole_crosscheck(&c, &[0.0], &[0.0], &grid).unwrap().abs() < 1e-10);
    }

    #[test]
    fn vanishing_discount_constant_sigma() {
        let grid = grid1();
        for alpha in [2.0, 3.0] {
            let spec = ConstantSigma::one_d(0.7, 0.0, 1.0).spec(alpha).unwrap();
            let corr = vanishing_discount(&spec, &[0.0], &[2.0], spec.regime(), &DEFAULT_DELTAS, &grid).unwrap();
            assert!((corr.lambda - 1.96).abs() < 1e-8);
            assert!(corr.w.iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn vanishing_discount_preconditions() {
        let grid = grid1();
        let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(2.0).unwrap();
        assert!(vanishing_discount(&spec, &[0.0], &[1.0], Regime::Critical, &[1e-1, 1e-2, 1e-3], &grid).is_err());
        assert!(vanishing_discount(&spec, &[0.0], &[1.0], Regime::Critical, &[1e-3, 1e-2, 1e-1, 1.0], &grid).is_err());
        assert!(vanishing_discount(&spec, &[0.0], &[1.0], Regime::Supercritical, &DEFAULT_DELTAS, &grid).is_err());
    }

    #[test]
    fn reference_node_does_not_move_lambda() {
        let grid = grid1();
        let spec = BumpSigma::one_d(1.0, 1.0).spec(2.0).unwrap();
        let a = vanishing_discount(&spec, &[0.0], &[1.0], Regime::Critical, &DEFAULT_DELTAS, &grid).unwrap();
        let b = vanishing_discount_at(&spec, &[0.0], &[1.0], Regime::Critical, &DEFAULT_DELTAS, &grid, grid.center() + 20)
            .unwrap();
        assert!((a.lambda - b.lambda).abs() < 1e-3, "{} {}", a.lambda, b.lambda);
    }

    #[test]
    fn lipschitz_detector() {
        let grid = grid1();
        let spec = BumpSigma::one_d(1.0, 1.0).spec(2.0).unwrap();
        let sols: Vec<CellSolution> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&d| solve_cell_critical(&spec, &[0.0], &[1.0], d, &grid, 1e-10, 100).unwrap())
            .collect();
        let rep = lipschitz_report(&sols).unwrap();
        assert!(rep.pass, "{rep:?}");
        let mut bad = sols.clone();
        for s in bad.iter_mut() {
            let k = 1.0 / s.delta;
            s.w.iter_mut().for_each(|v| *v *= k);
        }
        let rep = lipschitz_report(&bad).unwrap();
        assert!(!rep.pass && rep.ratio > 50.0);
        assert!(lipschitz_report(&sols[..2]).is_err());
    }

    #[test]
    fn growth_detector() {
        let grid = grid1();
        let zero = vec![0.0; grid.len()];
        let r = growth_check(&grid, &zero, 1.0).unwrap();
        assert!(r.pass && r.c_bar == 0.0);
        let lin: Vec<f64> = (0..grid.len()).map(|i| grid.point(i)[0].abs()).collect();
        assert!(!growth_check(&grid, &lin, 1.0).unwrap().pass);
        assert!(growth_check(&grid, &zero, 3.0).is_err());
    }

    #[test]
    fn convex_flip_identity() {
        let grid = grid1();
        let spec = BumpSigma::one_d(1.0, 1.0).spec(2.0).unwrap();
        let corr = vanishing_discount(&spec, &[0.0], &[1.0], Regime::Critical, &DEFAULT_DELTAS, &grid).unwrap();
        let primal = concave_residual(&corr, &spec).unwrap();
        let flip = convex_flip_residual(&corr, &spec).unwrap();
        assert!(flip <= 2.0 * primal + 1e-12, "{flip} {primal}");
        let mut noisy = corr.clone();
        for (i, v) in noisy.w.iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.1 } else { -0.1 };
        }
        assert!(convex_flip_residual(&noisy, &spec).unwrap() >= 10.0 * flip);
    }
}

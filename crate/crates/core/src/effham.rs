//! Tabulated effective Hamiltonian, its property checks and the discrete
//! Legendre transform.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{self, vanishing_discount};
use crate::error::{Error, Result};
use crate::grid::{FastGrid, TensorGrid};
use crate::measure::{effective_h_super, solve_stationary_fp};
use crate::model::{ModelSpec, Regime};

/// Large finite cost standing in for `+inf` outside the attainable slopes.
pub const INFEASIBLE: f64 = 1e12;

const BOUNDS_TOL: f64 = 1e-6;
const CONVEXITY_TOL: f64 = 1e-8;

/// `H(x_i, p_j)` on a tensor `(x, p)` grid, stored `x`-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHamiltonianTable {
    pub regime: Regime,
    pub x_grid: TensorGrid,
    pub p_grid: TensorGrid,
    pub values: Vec<f64>,
    /// Per-node convergence diagnostic of the underlying solve.
    pub diagnostics: Vec<f64>,
    combined: TensorGrid,
}

impl EffectiveHamiltonianTable {
    pub fn new(
        regime: Regime,
        x_grid: TensorGrid,
        p_grid: TensorGrid,
        values: Vec<f64>,
        diagnostics: Vec<f64>,
    ) -> Result<Self> {
        if x_grid.dims() != p_grid.dims() || x_grid.dims() > 2 {
            return Err(Error::InvalidInput("x and p grids must share dimension n <= 2".into()));
        }
        let len = x_grid.len() * p_grid.len();
        if values.len() != len || diagnostics.len() != len {
            return Err(Error::InvalidInput("table size does not match its grids".into()));
        }
        let combined = TensorGrid::new(x_grid.axes().iter().chain(p_grid.axes()).cloned().collect())?;
        Ok(Self {
            regime,
            x_grid,
            p_grid,
            values,
            diagnostics,
            combined,
        })
    }

    /// Table of an analytic Hamiltonian `f(x, p)` with zero diagnostics.
    pub fn from_fn(
        regime: Regime,
        x_grid: TensorGrid,
        p_grid: TensorGrid,
        f: impl Fn(&[f64], &[f64]) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(x_grid.len() * p_grid.len());
        for ix in 0..x_grid.len() {
            let x = x_grid.point(ix);
            for ip in 0..p_grid.len() {
                values.push(f(&x, &p_grid.point(ip)));
            }
        }
        let n = values.len();
        Self::new(regime, x_grid, p_grid, values, vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.x_grid.dims()
    }

    pub fn index(&self, ix: usize, ip: usize) -> usize {
        ix * self.p_grid.len() + ip
    }

    pub fn value(&self, ix: usize, ip: usize) -> f64 {
        self.values[self.index(ix, ip)]
    }

    pub fn row(&self, ix: usize) -> &[f64] {
        let np = self.p_grid.len();
        &self.values[ix * np..(ix + 1) * np]
    }

    /// Multilinear interpolation in `(x, p)`, clamped to the table box.
    pub fn interpolate(&self, x: &[f64], p: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().chain(p).copied().collect();
        self.combined.interpolate(&self.values, &z)
    }

    /// `p`-row at an arbitrary `x` (multilinear in `x`).
    pub fn row_at(&self, x: &[f64]) -> Vec<f64> {
        let np = self.p_grid.len();
        let nx = self.x_grid.len();
        (0..np)
            .map(|ip| {
                let col: Vec<f64> = (0..nx).map(|ix| self.value(ix, ip)).collect();
                self.x_grid.interpolate(&col, x)
            })
            .collect()
    }

    /// Largest `|dH/dp_k|` between neighboring table nodes, per axis.
    pub fn max_slopes(&self) -> Vec<f64> {
        (0..self.n())
            .map(|k| {
                (0..self.x_grid.len())
                    .map(|ix| axis_slope_range(&self.p_grid, self.row(ix), k))
                    .map(|(lo, hi)| lo.abs().max(hi.abs()))
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// `(min, max)` of consecutive-node difference quotients along axis `k`.
pub fn axis_slope_range(grid: &TensorGrid, row: &[f64], k: usize) -> (f64, f64) {
    let axis = grid.axis(k);
    let stride = grid.stride(k);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    if axis.len() < 2 {
        return (0.0, 0.0);
    }
    for flat in 0..grid.len() {
        let i = grid.multi_index(flat)[k];
        if i + 1 < axis.len() {
            let s = (row[flat + stride] - row[flat]) / (axis[i + 1] - axis[i]);
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    (lo, hi)
}

/// `min / max` of `|sigma^T p|^2` over the nodes of `grid`.
pub fn forcing_bounds(spec: &ModelSpec, x: &[f64], p: &[f64], ys: &[Vec<f64>]) -> (f64, f64) {
    ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
        let f = spec.forcing(x, y, p);
        (lo.min(f), hi.max(f))
    })
}

pub fn grid_points(grid: &FastGrid) -> Vec<Vec<f64>> {
    (0..grid.len()).map(|i| grid.point(i)).collect()
}

/// Fills the table by vanishing discount (critical) or the invariant-measure
/// integral (supercritical), in parallel over nodes.
pub fn tabulate_h(
    spec: &ModelSpec,
    regime: Regime,
    x_grid: &TensorGrid,
    p_grid: &TensorGrid,
    deltas: &[f64],
    cell_grid: &FastGrid,
) -> Result<EffectiveHamiltonianTable> {
    if x_grid.is_empty() || p_grid.is_empty() {
        return Err(Error::InvalidInput("grids must be nonempty".into()));
    }
    if x_grid.dims() != spec.n || p_grid.dims() != spec.n {
        return Err(Error::InvalidInput("x and p grids must have dimension n".into()));
    }
    if spec.regime() != regime {
        return Err(Error::Precondition(format!(
            "model regime is {}, requested {regime}",
            spec.regime()
        )));
    }
    let mu = match regime {
        Regime::Supercritical => Some(solve_stationary_fp(spec, cell_grid)?),
        Regime::Critical => None,
    };
    let np = p_grid.len();
    let nodes: Vec<(usize, usize)> = (0..x_grid.len()).flat_map(|ix| (0..np).map(move |ip| (ix, ip))).collect();
    let solved: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|&(ix, ip)| {
            let x = x_grid.point(ix);
            let p = p_grid.point(ip);
            match &mu {
                Some(mu) => Ok((effective_h_super(spec, &x, &p, mu)?, mu.residual)),
                None => {
                    let c = vanishing_discount(spec, &x, &p, regime, deltas, cell_grid)?;
                    Ok((c.lambda, c.node_diagnostic))
                }
            }
        })
        .collect::<Result<_>>()?;
    let (values, diagnostics): (Vec<f64>, Vec<f64>) = solved.into_iter().unzip();
    let table = EffectiveHamiltonianTable::new(regime, x_grid.clone(), p_grid.clone(), values, diagnostics)?;

    let ys = grid_points(cell_grid);
    for (k, &(ix, ip)) in nodes.iter().enumerate() {
        let x = x_grid.point(ix);
        let p = p_grid.point(ip);
        let (lo, hi) = forcing_bounds(spec, &x, &p, &ys);
        let v = table.values[k];
        if v < lo - BOUNDS_TOL || v > hi + BOUNDS_TOL {
            return Err(Error::BoundViolation(format!(
                "H at x = {x:?}, p = {p:?} is {v}, outside [{lo}, {hi}]"
            )));
        }
    }
    let conv = convexity_check(&table);
    if !conv.pass {
        return Err(Error::NonMonotone(format!(
            "table is not convex in p (worst second difference {:e} at {:?})",
            conv.worst_margin, conv.witness
        )));
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub pass: bool,
    pub violations: usize,
    pub checked: usize,
    /// Smallest margin (negative when violated).
    pub worst_margin: f64,
    pub witness: Option<String>,
}

impl CheckOutcome {
    fn empty() -> Self {
        Self {
            pass: true,
            violations: 0,
            checked: 0,
            worst_margin: f64::INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, margin: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            if margin < 0.0 {
                self.witness = Some(at());
            }
        }
        if margin < 0.0 || margin.is_nan() {
            self.violations += 1;
            self.pass = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub continuity: CheckOutcome,
    pub convexity: CheckOutcome,
    pub bounds: CheckOutcome,
    pub semi_homogeneity: CheckOutcome,
    /// Evaluated pairs whose `max_y |sigma^T p - sigma^T q|^2` is below 1e-12.
    pub near_zero_pairs: usize,
    pub y_sample: Vec<Vec<f64>>,
    pub pass: bool,
}

/// Discrete convexity along every `p` axis line: difference-quotient
/// increments at least `-1e-8`.
pub fn convexity_check(table: &EffectiveHamiltonianTable) -> CheckOutcome {
    let mut out = CheckOutcome::empty();
    let pg = &table.p_grid;
    for ix in 0..table.x_grid.len() {
        let row = table.row(ix);
        for k in 0..pg.dims() {
            let axis = pg.axis(k);
            let stride = pg.stride(k);
            for flat in 0..pg.len() {
                let i = pg.multi_index(flat)[k];
                if i == 0 || i + 1 >= axis.len() {
                    continue;
                }
                let right = (row[flat + stride] - row[flat]) / (axis[i + 1] - axis[i]);
                let left = (row[flat] - row[flat - stride]) / (axis[i] - axis[i - 1]);
                out.record(right - left + CONVEXITY_TOL, || {
                    format!("x = {:?}, p = {:?}", table.x_grid.point(ix), pg.point(flat))
                });
            }
        }
    }
    out
}

/// Continuity through a modulus estimate: along every axis of the `(x, p)`
/// grid the largest neighbor jump must stay below 3/4 of the largest jump
/// over two cells.
fn continuity_check(table: &EffectiveHamiltonianTable) -> CheckOutcome {
    let mut out = CheckOutcome::empty();
    let g = &table.combined;
    for k in 0..g.dims() {
        let n = g.axis(k).len();
        if n < 3 {
            continue;
        }
        let stride = g.stride(k);
        let (mut w1, mut w2): (f64, f64) = (0.0, 0.0);
        for flat in 0..g.len() {
            let i = g.multi_index(flat)[k];
            if i + 1 < n {
                w1 = w1.max((table.values[flat + stride] - table.values[flat]).abs());
            }
            if i + 2 < n {
                w2 = w2.max((table.values[flat + 2 * stride] - table.values[flat]).abs());
            }
        }
        out.record(0.75 * w2 + 1e-9 - w1, || format!("axis {k}: omega_1 = {w1}, omega_2 = {w2}"));
    }
    out
}

/// Runs the continuity, convexity, bounds and semi-homogeneity checks.
///
/// The semi-homogeneity inequality
/// `mu H(x, p/mu) - H(z, q) >= max_y |sigma^T(x,y) p - sigma^T(z,y) q|^2 / (mu - 1) - tol`
/// is tested verbatim for `mu` in {1/4, 1/2, 3/4} with
/// `tol = 2 (diag(x, p/mu) + diag(z, q))`.
pub fn property_suite(
    table: &EffectiveHamiltonianTable,
    spec: &ModelSpec,
    y_sample: &[Vec<f64>],
) -> Result<PropertyReport> {
    let min_points = 50usize.pow(spec.m as u32);
    if y_sample.len() < min_points {
        return Err(Error::Precondition(format!(
            "y_sample needs at least {min_points} points, got {}",
            y_sample.len()
        )));
    }
    let (n, m) = (spec.n, spec.m);
    let nx = table.x_grid.len();
    let np = table.p_grid.len();

    // sigma(x_i, y_s) for every slow node and sample
    let sig: Vec<Vec<f64>> = (0..nx)
        .map(|ix| {
            let x = table.x_grid.point(ix);
            let mut out = vec![0.0; y_sample.len() * n * m];
            for (s, y) in y_sample.iter().enumerate() {
                spec.sigma(&x, y, &mut out[s * n * m..(s + 1) * n * m]);
            }
            out
        })
        .collect();
    let stp = |ix: usize, s: usize, p: &[f64], out: &mut [f64]| {
        let a = &sig[ix][s * n * m..(s + 1) * n * m];
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..n).map(|i| a[i * m + j] * p[i]).sum();
        }
    };

    let mut bounds = CheckOutcome::empty();
    let mut buf = vec![0.0; m];
    for ix in 0..nx {
        for ip in 0..np {
            let p = table.p_grid.point(ip);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in 0..y_sample.len() {
                stp(ix, s, &p, &mut buf);
                let f: f64 = buf.iter().map(|v| v * v).sum();
                lo = lo.min(f);
                hi = hi.max(f);
            }
            let v = table.value(ix, ip);
            let tol = BOUNDS_TOL + 2.0 * table.diagnostics[table.index(ix, ip)];
            bounds.record((v - lo + tol).min(hi - v + tol), || {
                format!("x = {:?}, p = {p:?}: {v} not in [{lo}, {hi}]", table.x_grid.point(ix))
            });
        }
    }

    let mut semi = CheckOutcome::empty();
    let mut near_zero = 0usize;
    let mut b1 = vec![0.0; m];
    let mut b2 = vec![0.0; m];
    for mu in [0.25, 0.5, 0.75] {
        for ix in 0..nx {
            for ip in 0..np {
                let p = table.p_grid.point(ip);
                let scaled: Option<Vec<usize>> = p
                    .iter()
                    .enumerate()
                    .map(|(k, v)| table.p_grid.find_on_axis(k, v / mu, 1e-9))
                    .collect();
                let Some(idx) = scaled else { continue };
                let ip_s = table.p_grid.flat_index(&idx);
                let lhs_a = mu * table.value(ix, ip_s);
                let diag_a = table.diagnostics[table.index(ix, ip_s)];
                for iz in 0..nx {
                    for iq in 0..np {
                        let lhs = lhs_a - table.value(iz, iq);
                        let tol = 2.0 * (diag_a + table.diagnostics[table.index(iz, iq)]);
                        // the right side is <= -tol, so a nonnegative lhs + tol passes outright
                        if lhs + tol >= 0.0 {
                            semi.record(lhs + tol, String::new);
                            continue;
                        }
                        let q = table.p_grid.point(iq);
                        let mut sup: f64 = 0.0;
                        for s in 0..y_sample.len() {
                            stp(ix, s, &p, &mut b1);
                            stp(iz, s, &q, &mut b2);
                            let d: f64 = b1.iter().zip(&b2).map(|(a, b)| (a - b) * (a - b)).sum();
                            sup = sup.max(d);
                        }
                        if sup <= 1e-12 {
                            near_zero += 1;
                        }
                        let rhs = sup / (mu - 1.0) - tol;
                        semi.record(lhs - rhs, || {
                            format!(
                                "mu = {mu}, (x, p) = ({:?}, {p:?}), (z, q) = ({:?}, {q:?})",
                                table.x_grid.point(ix),
                                table.x_grid.point(iz)
                            )
                        });
                    }
                }
            }
        }
    }

    let continuity = continuity_check(table);
    let convexity = convexity_check(table);
    let pass = continuity.pass && convexity.pass && bounds.pass && semi.pass;
    Ok(PropertyReport {
        continuity,
        convexity,
        bounds,
        semi_homogeneity: semi,
        near_zero_pairs: near_zero,
        y_sample: y_sample.to_vec(),
        pass,
    })
}

/// `L(x, q)` on a tensor `(x, q)` grid with feasibility flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveLagrangianTable {
    pub x_grid: TensorGrid,
    pub q_grid: TensorGrid,
    pub values: Vec<f64>,
    pub feasible: Vec<bool>,
    /// Maximizing `p` node for every feasible entry.
    pub argmax: Vec<Option<usize>>,
}

impl EffectiveLagrangianTable {
    pub fn index(&self, ix: usize, iq: usize) -> usize {
        ix * self.q_grid.len() + iq
    }

    /// Multilinear lookup; `None` when any corner is infeasible.
    pub fn lookup(&self, x: &[f64], q: &[f64]) -> Option<f64> {
        if !self.q_grid.contains(q) {
            return None;
        }
        let nq = self.q_grid.len();
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (ix, wx) in corner_weights(&self.x_grid, x) {
            for (iq, wq) in corner_weights(&self.q_grid, q) {
                let w = wx * wq;
                if w == 0.0 {
                    continue;
                }
                let k = ix * nq + iq;
                if !self.feasible[k] {
                    return None;
                }
                acc += w * self.values[k];
                wsum += w;
            }
        }
        (wsum > 0.0).then_some(acc)
    }
}

/// Multilinear corner indices and weights of `x` (clamped).
pub fn corner_weights(grid: &TensorGrid, x: &[f64]) -> Vec<(usize, f64)> {
    let d = grid.dims();
    let cells: Vec<(usize, f64)> = x
        .iter()
        .zip(grid.axes())
        .map(|(&v, a)| crate::grid::locate(a, v))
        .collect();
    let mut out = Vec::with_capacity(1 << d);
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = Vec::with_capacity(d);
        for (k, (i, frac)) in cells.iter().enumerate() {
            let n = grid.axis(k).len();
            if (corner >> k) & 1 == 1 {
                if n == 1 {
                    w = 0.0;
                }
                idx.push((i + 1).min(n - 1));
                w *= frac;
            } else {
                idx.push(*i);
                w *= 1.0 - frac;
            }
        }
        out.push((grid.flat_index(&idx), w));
    }
    out
}

/// Discrete conjugate of one row: `max_j (p_j . q - values_j)` at each `q`,
/// `INFEASIBLE` outside the attainable slope box.
pub fn conjugate_row(p_grid: &TensorGrid, values: &[f64], q_grid: &TensorGrid) -> (Vec<f64>, Vec<bool>, Vec<Option<usize>>) {
    let ranges: Vec<(f64, f64)> = (0..p_grid.dims()).map(|k| axis_slope_range(p_grid, values, k)).collect();
    let ps: Vec<Vec<f64>> = (0..p_grid.len()).map(|j| p_grid.point(j)).collect();
    let mut vals = Vec::with_capacity(q_grid.len());
    let mut feas = Vec::with_capacity(q_grid.len());
    let mut arg = Vec::with_capacity(q_grid.len());
    for iq in 0..q_grid.len() {
        let q = q_grid.point(iq);
        let ok = q
            .iter()
            .zip(&ranges)
            .all(|(v, (lo, hi))| *v >= lo - 1e-12 && *v <= hi + 1e-12);
        if !ok {
            vals.push(INFEASIBLE);
            feas.push(false);
            arg.push(None);
            continue;
        }
        let (j, best) = ps
            .iter()
            .zip(values)
            .enumerate()
            .map(|(j, (p, h))| (j, p.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() - h))
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        vals.push(best);
        feas.push(true);
        arg.push(Some(j));
    }
    (vals, feas, arg)
}

/// Lagrangian row at slow node `x_index`.
pub fn legendre_transform(table: &EffectiveHamiltonianTable, x_index: usize, q_grid: &TensorGrid) -> Result<EffectiveLagrangianTable> {
    if x_index >= table.x_grid.len() {
        return Err(Error::InvalidInput("x index outside the table".into()));
    }
    if q_grid.dims() != table.n() {
        return Err(Error::InvalidInput("q grid dimension must equal n".into()));
    }
    let (values, feasible, argmax) = conjugate_row(&table.p_grid, table.row(x_index), q_grid);
    Ok(EffectiveLagrangianTable {
        x_grid: TensorGrid::single_point(&table.x_grid.point(x_index)),
        q_grid: q_grid.clone(),
        values,
        feasible,
        argmax,
    })
}

/// Lagrangian on every slow node of the table.
pub fn legendre_table(table: &EffectiveHamiltonianTable, q_grid: &TensorGrid) -> Result<EffectiveLagrangianTable> {
    if q_grid.dims() != table.n() {
        return Err(Error::InvalidInput("q grid dimension must equal n".into()));
    }
    let rows: Vec<_> = (0..table.x_grid.len())
        .into_par_iter()
        .map(|ix| conjugate_row(&table.p_grid, table.row(ix), q_grid))
        .collect();
    let mut out = EffectiveLagrangianTable {
        x_grid: table.x_grid.clone(),
        q_grid: q_grid.clone(),
        values: Vec::new(),
        feasible: Vec::new(),
        argmax: Vec::new(),
    };
    for (v, f, a) in rows {
        out.values.extend(v);
        out.feasible.extend(f);
        out.argmax.extend(a);
    }
    Ok(out)
}

pub use cell::DEFAULT_DELTAS;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{BumpSigma, ConstantSigma};

    fn quad_table(c: f64, lo: f64, hi: f64, step: f64) -> EffectiveHamiltonianTable {
        EffectiveHamiltonianTable::from_fn(
            Regime::Supercritical,
            TensorGrid::single_point(&[0.0]),
            TensorGrid::uniform(1, lo, hi, step).unwrap(),
            |_, p| c * p[0] * p[0],
        )
        .unwrap()
    }

    fn y_sample(y_max: f64, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|i| vec![-y_max + 2.0 * y_max * i as f64 / (count - 1) as f64])
            .collect()
    }

    #[test]
    fn constant_sigma_tables() {
        let grid = FastGrid::new(1, 8.0, 0.05).unwrap();
        let xg = TensorGrid::new(vec![vec![-1.0, 0.0, 1.0]]).unwrap();
        let pg = TensorGrid::uniform(1, -2.0, 2.0, 0.5).unwrap();
        for alpha in [2.0, 3.0] {
            let spec = ConstantSigma::one_d(0.8, 0.0, 1.0).spec(alpha).unwrap();
            let t = tabulate_h(&spec, spec.regime(), &xg, &pg, &DEFAULT_DELTAS, &grid).unwrap();
            for ix in 0..3 {
                for ip in 0..pg.len() {
                    let p = pg.point(ip)[0];
                    assert!((t.value(ix, ip) - 0.64 * p * p).abs() <= 1e-6);
                }
            }
            let rep = property_suite(&t, &spec, &y_sample(8.0, 60)).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn supercritical_bump_scaling_and_zero_row() {
        let grid = FastGrid::new(1, 8.0, 0.05).unwrap();
        let spec = BumpSigma::one_d(1.0, 1.0).spec(3.0).unwrap();
        let xg = TensorGrid::single_point(&[0.0]);
        let pg = TensorGrid::new(vec![vec![-2.0, -1.0, 0.0, 1.0, 2.0]]).unwrap();
        let t = tabulate_h(&spec, Regime::Supercritical, &xg, &pg, &DEFAULT_DELTAS, &grid).unwrap();
        let c = 1.0 + 3f64.sqrt().recip();
        for ip in 0..5 {
            let p = pg.point(ip)[0];
            assert!((t.value(0, ip) - c * p * p).abs() < 1e-3 * (1.0 + p * p));
            assert_eq!(t.value(0, ip), t.value(0, 4 - ip));
        }
        assert_eq!(t.value(0, 2), 0.0);
    }

    #[test]
    fn perturbed_table_is_detected() {
        let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(3.0).unwrap();
        let mut t = EffectiveHamiltonianTable::from_fn(
            Regime::Supercritical,
            TensorGrid::single_point(&[0.0]),
            TensorGrid::uniform(1, -2.0, 2.0, 0.25).unwrap(),
            |_, p| p[0] * p[0],
        )
        .unwrap();
        assert!(property_suite(&t, &spec, &y_sample(8.0, 60)).unwrap().pass);
        t.values[5] += 0.5;
        let rep = property_suite(&t, &spec, &y_sample(8.0, 60)).unwrap();
        assert!(!rep.pass);
        assert!(!rep.convexity.pass || !rep.bounds.pass);
        assert!(property_suite(&t, &spec, &y_sample(8.0, 10)).is_err());
    }

    #[test]
    fn legendre_examples() {
        let t = quad_table(1.0, -5.0, 5.0, 0.01);
        let qg = TensorGrid::new(vec![vec![0.0, 2.0, 12.0]]).unwrap();
        let l = legendre_transform(&t, 0, &qg).unwrap();
        assert!((l.values[1] - 1.0).abs() < 1e-3);
        assert_eq!(l.values[0], 0.0);
        assert!(!l.feasible[2] && l.values[2] == INFEASIBLE);
    }

    #[test]
    fn lookup_respects_feasibility() {
        let t = quad_table(1.0, -2.0, 2.0, 0.1);
        let qg = TensorGrid::uniform(1, -5.0, 5.0, 0.5).unwrap();
        let l = legendre_table(&t, &qg).unwrap();
        assert!(l.lookup(&[0.0], &[1.0]).is_some());
        assert!(l.lookup(&[0.0], &[4.5]).is_none());
        assert!(l.lookup(&[0.0], &[7.0]).is_none());
    }
}

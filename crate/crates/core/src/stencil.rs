//! Monotone finite-difference generator on a [`FastGrid`].
//!
//! Discretizes `L u = tr(A D^2 u) + d . Du` as a Markov-chain generator:
//! nonnegative off-diagonal weights and zero row sums. Drift is centered
//! where the local diffusion dominates (`|d| h <= 2 D`) and upwinded
//! otherwise; mixed derivatives use the Kushner stencil; the boundary is
//! homogeneous Neumann through mirrored ghost nodes.

use crate::error::{Error, Result};
use crate::grid::FastGrid;
use crate::linalg::BandMatrix;

/// Local operator coefficients at one node. `diff = [a11, a12, a22]` (only
/// `a11` is read in 1D), `drift = [d1, d2]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeCoef {
    pub diff: [f64; 3],
    pub drift: [f64; 2],
}

impl NodeCoef {
    pub fn one_d(a: f64, d: f64) -> Self {
        Self {
            diff: [a, 0.0, 0.0],
            drift: [d, 0.0],
        }
    }
}

/// Which first-difference stencil an axis uses at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Centered,
    Forward,
    Backward,
}

/// Diffusion left on the axis neighbors after the Kushner cross stencil
/// took its share: `a_kk - |a12|`.
pub fn axis_diffusion(c: &NodeCoef, axis: usize, m: usize) -> f64 {
    let akk = if axis == 0 { c.diff[0] } else { c.diff[2] };
    if m == 1 {
        akk
    } else {
        akk - c.diff[1].abs()
    }
}

/// Centered drift keeps both weights nonnegative iff `|d| h <= 2 D`.
pub fn region_for(drift: f64, diff: f64, h: f64) -> Region {
    if drift.abs() * h <= 2.0 * diff {
        Region::Centered
    } else if drift > 0.0 {
        Region::Forward
    } else {
        Region::Backward
    }
}

/// Drift interval `[lo, hi]` on which `region` is the monotone choice.
pub fn region_interval(region: Region, diff: f64, h: f64) -> (f64, f64) {
    let edge = 2.0 * diff / h;
    match region {
        Region::Centered => (-edge, edge),
        Region::Forward => (edge, f64::INFINITY),
        Region::Backward => (f64::NEG_INFINITY, -edge),
    }
}

/// `(minus, plus)` neighbor weights of one axis.
pub fn axis_weights(diff: f64, drift: f64, h: f64, region: Region) -> (f64, f64) {
    let k = diff / (h * h);
    match region {
        Region::Centered => (k - drift / (2.0 * h), k + drift / (2.0 * h)),
        Region::Forward => (k, k + drift / h),
        Region::Backward => (k - drift / h, k),
    }
}

/// Bandwidth of generators on `grid` (symmetric).
pub fn bandwidth(grid: &FastGrid) -> usize {
    if grid.dim() == 1 {
        1
    } else {
        grid.points_per_axis() + 1
    }
}

/// Off-diagonal entries of generator row `i` (duplicates possible at the
/// mirrored boundary). Returns the diagonal, minus the sum of the weights.
pub fn generator_row(
    grid: &FastGrid,
    i: usize,
    c: &NodeCoef,
    regions: &[Region],
    out: &mut Vec<(usize, f64)>,
) -> Result<f64> {
    out.clear();
    let m = grid.dim();
    let h = grid.spacing();
    let mut total = 0.0;
    for axis in 0..m {
        let d = axis_diffusion(c, axis, m);
        if d < -1e-14 * (1.0 + c.diff[0].abs() + c.diff[2].abs()) {
            return Err(Error::NonMonotone(format!(
                "cross diffusion exceeds axis diffusion at node {i} (a = {:?}); Kushner stencil needs a_kk >= |a12|",
                c.diff
            )));
        }
        let (wm, wp) = axis_weights(d.max(0.0), c.drift[axis], h, regions[axis]);
        if wm < -1e-12 * (wm.abs() + wp.abs() + 1.0) || wp < -1e-12 * (wm.abs() + wp.abs() + 1.0) {
            return Err(Error::NonMonotone(format!(
                "negative stencil weight at node {i}, axis {axis} ({wm:e}, {wp:e})"
            )));
        }
        let (wm, wp) = (wm.max(0.0), wp.max(0.0));
        out.push((grid.mirrored_neighbor(i, axis, -1), wm));
        out.push((grid.mirrored_neighbor(i, axis, 1), wp));
        total += wm + wp;
    }
    if m == 2 && c.diff[1] != 0.0 {
        // 2 a12 u_xy with the sign-adapted 7-point stencil
        let w = c.diff[1].abs() / (h * h);
        let (s1, s2) = if c.diff[1] > 0.0 { (1, 1) } else { (1, -1) };
        let a = grid.mirrored_neighbor(grid.mirrored_neighbor(i, 0, s1), 1, s2);
        let b = grid.mirrored_neighbor(grid.mirrored_neighbor(i, 0, -s1), 1, -s2);
        out.push((a, w));
        out.push((b, w));
        total += 2.0 * w;
    }
    Ok(-total)
}

/// Assembles the generator for per-node coefficients and regions.
pub fn assemble_with_regions(
    grid: &FastGrid,
    coefs: &[NodeCoef],
    regions: &[[Region; 2]],
) -> Result<BandMatrix> {
    let n = grid.len();
    let bw = bandwidth(grid);
    let mut g = BandMatrix::zeros(n, bw, bw);
    let mut row = Vec::with_capacity(12);
    let m = grid.dim();
    for i in 0..n {
        let diag = generator_row(grid, i, &coefs[i], &regions[i][..m], &mut row)?;
        g.add(i, i, diag);
        for &(j, w) in &row {
            g.add(i, j, w);
        }
    }
    Ok(g)
}

/// Regions picked by [`region_for`] at every node.
pub fn natural_regions(grid: &FastGrid, coefs: &[NodeCoef]) -> Vec<[Region; 2]> {
    let m = grid.dim();
    let h = grid.spacing();
    coefs
        .iter()
        .map(|c| {
            let mut r = [Region::Centered; 2];
            for (axis, slot) in r.iter_mut().enumerate().take(m) {
                *slot = region_for(c.drift[axis], axis_diffusion(c, axis, m).max(0.0), h);
            }
            r
        })
        .collect()
}

pub fn assemble(grid: &FastGrid, coefs: &[NodeCoef]) -> Result<BandMatrix> {
    assemble_with_regions(grid, coefs, &natural_regions(grid, coefs))
}

/// True when every axis neighbor weight is positive, which makes the chain
/// irreducible and its null space one-dimensional.
pub fn is_irreducible(grid: &FastGrid, coefs: &[NodeCoef]) -> bool {
    let m = grid.dim();
    coefs.iter().all(|c| (0..m).all(|k| axis_diffusion(c, k, m) > 0.0))
}

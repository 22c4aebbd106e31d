//! Grids: the truncated fast-variable box and tensor grids for the slow
//! variable, momenta and velocities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on the box `[-y_max, y_max]^m`, `m` in {1, 2}, containing the
/// origin as a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastGrid {
    m: usize,
    y_max: f64,
    h: f64,
    n_axis: usize,
}

impl FastGrid {
    pub fn new(m: usize, y_max: f64, h: f64) -> Result<Self> {
        if m == 0 || m > 2 {
            return Err(Error::InvalidInput(format!(
                "fast grids support m = 1 or 2, got m = {m}"
            )));
        }
        if !(y_max > 0.0 && h > 0.0 && y_max.is_finite() && h.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grid needs y_max > 0 and h > 0 (got {y_max}, {h})"
            )));
        }
        let half = (y_max / h).round();
        if h > y_max / 20.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "grid spacing {h} exceeds y_max/20 = {}",
                y_max / 20.0
            )));
        }
        let half = half as usize;
        Ok(Self {
            m,
            y_max: half as f64 * h,
            h,
            n_axis: 2 * half + 1,
        })
    }

    /// Default grid for a model: `Y_max = 8 max(1, R, R1)`, `h = 0.05` in 1D
    /// and `0.1` in 2D.
    pub fn default_for(m: usize, r_ergodic: f64, r1: f64) -> Result<Self> {
        let y_max = 8.0 * 1f64.max(r_ergodic).max(r1);
        let h = if m == 1 { 0.05 } else { 0.1 };
        Self::new(m, y_max, h)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn points_per_axis(&self) -> usize {
        self.n_axis
    }

    pub fn len(&self) -> usize {
        self.n_axis.pow(self.m as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat-index stride of each axis.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.n_axis
        }
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.y_max + i as f64 * self.h
    }

    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        if axis == 0 {
            flat % self.n_axis
        } else {
            flat / self.n_axis
        }
    }

    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.m) {
            *o = self.axis_coord(self.axis_index(flat, k));
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.m];
        self.point_into(flat, &mut p);
        p
    }

    /// Index of the origin.
    pub fn center(&self) -> usize {
        let c = self.n_axis / 2;
        if self.m == 1 {
            c
        } else {
            c + self.n_axis * c
        }
    }

    /// Neighbor of `flat` along `axis` (`dir = +1/-1`), reflected back into
    /// the box at the boundary (mirror ghost node).
    pub fn mirrored_neighbor(&self, flat: usize, axis: usize, dir: i64) -> usize {
        let i = self.axis_index(flat, axis) as i64;
        let last = self.n_axis as i64 - 1;
        let mut j = i + dir;
        if j < 0 {
            j = -j;
        } else if j > last {
            j = 2 * last - j;
        }
        (flat as i64 + (j - i) * self.stride(axis) as i64) as usize
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        (0..self.m).any(|k| {
            let i = self.axis_index(flat, k);
            i == 0 || i + 1 == self.n_axis
        })
    }

    /// Same spacing on a box of twice the half-width.
    pub fn doubled(&self) -> Result<Self> {
        Self::new(self.m, 2.0 * self.y_max, self.h)
    }

    /// Flat index on `self` of node `flat` of the (smaller, same spacing)
    /// grid `other`, if it lies inside.
    pub fn embed_index(&self, other: &FastGrid, flat: usize) -> Option<usize> {
        let off = (self.n_axis as i64 - other.n_axis as i64) / 2;
        if off < 0 || (self.h - other.h).abs() > 1e-12 * self.h {
            return None;
        }
        let mut idx = 0usize;
        for k in 0..self.m {
            let i = other.axis_index(flat, k) as i64 + off;
            idx += i as usize * self.stride(k);
        }
        Some(idx)
    }

    /// Node spacing volume `h^m`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.m as i32)
    }
}

/// Tensor-product grid with strictly increasing axes; the last axis varies
/// fastest in the flat layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    axes: Vec<Vec<f64>>,
}

impl TensorGrid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidInput("tensor grid needs at least one axis".into()));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::InvalidInput(format!("axis {k} is empty")));
            }
            if a.iter().any(|v| !v.is_finite()) || a.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidInput(format!(
                    "axis {k} must be finite and strictly increasing"
                )));
            }
        }
        Ok(Self { axes })
    }

    /// `dims` copies of the uniform axis `lo, lo + step, ..., hi`.
    pub fn uniform(dims: usize, lo: f64, hi: f64, step: f64) -> Result<Self> {
        Self::new(vec![uniform_axis(lo, hi, step)?; dims])
    }

    pub fn single_point(point: &[f64]) -> Self {
        Self {
            axes: point.iter().map(|&v| vec![v]).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, k: usize) -> usize {
        self.axes[k + 1..].iter().map(Vec::len).product()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for k in (0..self.dims()).rev() {
            let n = self.axes[k].len();
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.len() + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a[i])
            .collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[0]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[a.len() - 1]).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.axes).all(|(&v, a)| {
            let tol = 1e-12 * (1.0 + v.abs());
            v >= a[0] - tol && v <= a[a.len() - 1] + tol
        })
    }

    /// Index of the node on axis `k` matching `v` to within `tol`.
    pub fn find_on_axis(&self, k: usize, v: f64, tol: f64) -> Option<usize> {
        let a = &self.axes[k];
        let (i, frac) = locate(a, v);
        if a.len() == 1 {
            return ((a[0] - v).abs() <= tol).then_some(0);
        }
        if (a[i] - v).abs() <= tol {
            Some(i)
        } else if frac > 0.0 && (a[i + 1] - v).abs() <= tol {
            Some(i + 1)
        } else {
            None
        }
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = x
            .iter()
            .zip(&self.axes)
            .map(|(&v, a)| {
                let (i, frac) = locate(a, v);
                if frac > 0.5 && i + 1 < a.len() {
                    i + 1
                } else {
                    i
                }
            })
            .collect();
        self.flat_index(&idx)
    }

    /// Multilinear interpolation of node `values` at `x`, clamped to the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let d = self.dims();
        let cells: Vec<(usize, f64)> = x.iter().zip(&self.axes).map(|(&v, a)| locate(a, v)).collect();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for (k, (i, frac)) in cells.iter().enumerate() {
                let upper = (corner >> k) & 1 == 1;
                let n = self.axes[k].len();
                let (idx, wk) = if upper {
                    ((i + 1).min(n - 1), *frac)
                } else {
                    (*i, 1.0 - frac)
                };
                w *= wk;
                flat = flat * n + idx;
            }
            if w != 0.0 {
                acc += w * values[flat];
            }
        }
        acc
    }
}

/// Cell index and fractional position of `v` on a sorted axis, clamped.
pub fn locate(axis: &[f64], v: f64) -> (usize, f64) {
    let n = axis.len();
    if n == 1 || v <= axis[0] {
        return (0, 0.0);
    }
    if v >= axis[n - 1] {
        return (n - 2, 1.0);
    }
    let i = axis.partition_point(|&a| a <= v) - 1;
    let frac = (v - axis[i]) / (axis[i + 1] - axis[i]);
    (i, frac)
}

pub fn uniform_axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bad uniform axis [{lo}, {hi}] step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    // snap the node nearest to 0 so that momentum/velocity grids contain 0 exactly
    Ok((0..=n)
        .map(|i| {
            let v = lo + i as f64 * step;
            if v.abs() < 1e-9 * step {
                0.0
            } else {
                v
            }
        })
        .collect())
}

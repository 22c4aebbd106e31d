//! Banded linear algebra for the fast-variable operators.
//!
//! Every system assembled in this crate is a (possibly singular-shifted)
//! M-matrix, so Gaussian elimination without pivoting is stable and keeps the
//! band structure intact.

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub-diagonals and `ku` super-diagonals.
///
/// Entry `(i, j)` with `i - kl <= j <= i + ku` lives at
/// `data[i * width + (j + kl - i)]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.in_band(i, j), "({i},{j}) outside band");
        i * self.width() + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n || j >= self.n || !self.in_band(i, j) {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, o) in out.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.data[self.slot(i, j)] * x[j];
            }
            *o = acc;
        }
        out
    }

    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// In-place LU factorization without pivoting.
    pub fn factorize(mut self) -> Result<BandLu> {
        let n = self.n;
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if !pivot.is_finite() || pivot.abs() <= 1e-300 * scale {
                return Err(Error::Unstable(format!(
                    "zero pivot {pivot:e} at row {k} of a {n}x{n} band system"
                )));
            }
            let i_hi = (k + self.kl).min(n - 1);
            let j_hi = (k + self.ku).min(n - 1);
            for i in (k + 1)..=i_hi {
                let s_ik = self.slot(i, k);
                let l = self.data[s_ik] / pivot;
                self.data[s_ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in (k + 1)..=j_hi {
                    let s_kj = self.slot(k, j);
                    let s_ij = self.slot(i, j);
                    self.data[s_ij] -= l * self.data[s_kj];
                }
            }
        }
        Ok(BandLu { lu: self })
    }
}

/// Factorized band matrix; reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(m.kl);
            let mut acc = b[i];
            for (j, bj) in b.iter().enumerate().take(i).skip(lo) {
                acc -= m.data[m.slot(i, j)] * bj;
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + m.ku).min(n - 1);
            let mut acc = b[i];
            for (j, bj) in b.iter().enumerate().take(hi + 1).skip(i + 1) {
                acc -= m.data[m.slot(i, j)] * bj;
            }
            b[i] = acc / m.data[m.slot(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves `A x = b` and applies one step of iterative refinement.
pub fn solve_refined(a: &BandMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.clone().factorize()?;
    let mut x = lu.solve(b);
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    lu.solve_in_place(&mut r);
    for (xi, ri) in x.iter_mut().zip(&r) {
        *xi += ri;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "band solve".into(),
        });
    }
    Ok(x)
}

/// Normalized residual `|b - A x|_inf / (|A|_inf |x|_inf + |b|_inf)`.
pub fn relative_residual(a: &BandMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r = b
        .iter()
        .zip(&ax)
        .map(|(bi, ai)| (bi - ai).abs())
        .fold(0.0, f64::max);
    let denom = a.norm_inf() * norm_inf(x) + norm_inf(b);
    if denom == 0.0 {
        r
    } else {
        r / denom
    }
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric `k x k` row-major matrix.
pub fn sym_min_eigenvalue(a: &[f64], k: usize) -> f64 {
    match k {
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
            let mean = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            mean - rad
        }
        _ => {
            let m = nalgebra::DMatrix::from_row_slice(k, k, a);
            let sym = (&m + m.transpose()) * 0.5;
            sym.symmetric_eigenvalues().min()
        }
    }
}

/// Spectral norm of a general row-major `rows x cols` matrix.
pub fn operator_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 1 || cols == 1 {
        return a.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, a);
    m.singular_values().max()
}

/// `out = A^T v` for a row-major `rows x cols` matrix.
pub fn mat_t_vec(a: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate().take(cols) {
        let mut acc = 0.0;
        for i in 0..rows {
            acc += a[i * cols + j] * v[i];
        }
        *o = acc;
    }
}

/// `out = A v` for a row-major `rows x cols` matrix.
pub fn mat_vec(a: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let mut acc = 0.0;
        for j in 0..cols {
            acc += a[i * cols + j] * v[j];
        }
        *o = acc;
    }
}

/// `A A^T` for a row-major `rows x cols` matrix, returned row-major.
pub fn gram(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; rows * rows];
    for i in 0..rows {
        for k in 0..rows {
            let mut acc = 0.0;
            for j in 0..cols {
                acc += a[i * cols + j] * a[k * cols + j];
            }
            g[i * rows + k] = acc;
        }
    }
    g
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_m_matrix(n: usize, kl: usize, ku: usize, shift: f64) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, kl, ku);
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for i in 0..n {
            let mut row = 0.0;
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            for j in lo..=hi {
                if j != i {
                    let c = next();
                    a.set(i, j, -c);
                    row += c;
                }
            }
            a.set(i, i, row + shift);
        }
        a
    }

    #[test]
    fn lu_matches_product() {
        let a = random_m_matrix(40, 3, 5, 0.1);
        let x_true: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.mul_vec(&x_true);
        let x = solve_refined(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!(relative_residual(&a, &x, &b) < 1e-14);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = random_m_matrix(12, 2, 1, 0.5);
        let t = a.transpose();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(a.get(i, j), t.get(j, i));
            }
        }
        assert_eq!(t.transpose().bandwidths(), (2, 1));
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = BandMatrix::zeros(3, 1, 1);
        assert!(matches!(a.factorize(), Err(Error::Unstable(_))));
    }

    #[test]
    fn small_eigen_helpers() {
        assert!((sym_min_eigenvalue(&[2.0, 1.0, 1.0, 2.0], 2) - 1.0).abs() < 1e-14);
        assert!((sym_min_eigenvalue(&[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0], 3) - 1.0).abs() < 1e-12);
        assert!((operator_norm(&[1.0, 0.0, 0.0, 2.0], 2, 2) - 2.0).abs() < 1e-12);
    }
}

//! Invariant measure of the fast process and the supercritical effective
//! Hamiltonian `integral |sigma^T p|^2 dmu`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FastGrid;
use crate::linalg::{gram, norm_inf, sym_min_eigenvalue};
use crate::model::ModelSpec;
use crate::stencil::{self, NodeCoef};

/// Discrete stationary distribution on a fast grid.
///
/// `probabilities` are the stationary weights of the discrete chain;
/// `density` divides them by the trapezoid cell volume of each node, so that
/// `sum density_i * volume_i = mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantMeasureField {
    pub grid: FastGrid,
    pub probabilities: Vec<f64>,
    pub density: Vec<f64>,
    pub mass: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl InvariantMeasureField {
    /// Expectation of `f` under the measure.
    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut y = vec![0.0; self.grid.dim()];
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.grid.point_into(i, &mut y);
                p * f(&y)
            })
            .sum()
    }

    /// Node of maximal density.
    pub fn peak(&self) -> usize {
        self.density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }

    /// Discrete L1 distance `sum |rho_i - g(y_i)| volume_i` to a density `g`.
    pub fn l1_distance(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let vols = trapezoid_volumes(&self.grid);
        let mut y = vec![0.0; self.grid.dim()];
        self.density
            .iter()
            .zip(&vols)
            .enumerate()
            .map(|(i, (rho, v))| {
                self.grid.point_into(i, &mut y);
                (rho - g(&y)).abs() * v
            })
            .sum()
    }
}

/// Trapezoid cell volume of each node (half weight per boundary axis).
pub fn trapezoid_volumes(grid: &FastGrid) -> Vec<f64> {
    let n = grid.points_per_axis();
    let base = grid.cell_volume();
    (0..grid.len())
        .map(|i| {
            (0..grid.dim()).fold(base, |acc, k| {
                let j = grid.axis_index(i, k);
                if j == 0 || j + 1 == n {
                    0.5 * acc
                } else {
                    acc
                }
            })
        })
        .collect()
}

/// Generator coefficients of `dY = b dt + sqrt(2) tau dW`: `A = tau tau^T`,
/// drift `b`.
pub fn fast_generator_coefs(spec: &ModelSpec, grid: &FastGrid) -> Result<Vec<NodeCoef>> {
    let m = grid.dim();
    if spec.m != m {
        return Err(Error::InvalidInput(format!(
            "grid dimension {m} does not match model fast dimension {}",
            spec.m
        )));
    }
    let mut y = vec![0.0; m];
    let mut b = vec![0.0; m];
    (0..grid.len())
        .map(|i| {
            grid.point_into(i, &mut y);
            spec.b(&y, &mut b);
            let a = spec.diffusion(&y);
            let mut c = NodeCoef::default();
            if m == 1 {
                c.diff[0] = a[0];
                c.drift[0] = b[0];
            } else {
                c.diff = [a[0], 0.5 * (a[1] + a[2]), a[3]];
                c.drift = [b[0], b[1]];
            }
            if c.diff.iter().chain(&c.drift).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("fast coefficients at y = {y:?}"),
                });
            }
            Ok(c)
        })
        .collect()
}

const FP_TARGET: f64 = 1e-12;
const FP_TOL: f64 = 1e-10;

/// Null vector of the adjoint of the discrete fast generator, normalized to
/// unit mass.
pub fn solve_stationary_fp(spec: &ModelSpec, grid: &FastGrid) -> Result<InvariantMeasureField> {
    let coefs = fast_generator_coefs(spec, grid)?;
    if !stencil::is_irreducible(grid, &coefs) {
        return Err(Error::DegenerateModel(
            "fast generator is reducible on this grid; null space is not one-dimensional".into(),
        ));
    }
    let g = stencil::assemble(grid, &coefs)?;
    let gt = g.transpose();
    let n = grid.len();
    let scale = g.norm_inf();
    let shift = 1e-10 * (0..n).map(|i| g.get(i, i).abs()).fold(0.0, f64::max);

    let mut m = gt.clone();
    for i in 0..n {
        for j in i.saturating_sub(m.bandwidths().0)..=(i + m.bandwidths().1).min(n - 1) {
            let v = -m.get(i, j);
            m.set(i, j, v);
        }
        m.add(i, i, shift);
    }
    let lu = m.factorize()?;

    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        lu.solve_in_place(&mut pi);
        for v in pi.iter_mut() {
            *v = v.max(0.0);
        }
        let s: f64 = pi.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonFinite {
                context: "stationary Fokker-Planck iteration".into(),
            });
        }
        pi.iter_mut().for_each(|v| *v /= s);
        residual = norm_inf(&gt.mul_vec(&pi)) / (scale * norm_inf(&pi));
        if residual <= FP_TARGET {
            break;
        }
    }
    if residual > FP_TOL {
        return Err(Error::NoConvergence {
            context: "stationary Fokker-Planck null vector".into(),
            iterations,
            residual,
        });
    }
    let vols = trapezoid_volumes(grid);
    let density: Vec<f64> = pi.iter().zip(&vols).map(|(p, v)| p / v).collect();
    let mass = density.iter().zip(&vols).map(|(d, v)| d * v).sum();
    Ok(InvariantMeasureField {
        grid: grid.clone(),
        probabilities: pi,
        density,
        mass,
        residual,
        iterations,
    })
}

/// Gaussian law `N(mean, cov)`, covariance row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl Gaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn pdf(&self, y: &[f64]) -> f64 {
        let m = self.dim();
        let c = nalgebra::DMatrix::from_row_slice(m, m, &self.cov);
        let chol = match c.cholesky() {
            Some(ch) => ch,
            None => return f64::NAN,
        };
        let d = nalgebra::DVector::from_iterator(m, y.iter().zip(&self.mean).map(|(a, b)| a - b));
        let z = chol.solve(&d);
        let quad = d.dot(&z);
        let det = chol.determinant();
        (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powi(m as i32) * det).sqrt()
    }
}

/// Stationary law of `dY = (b_far - Y) dt + sqrt(2) tau_far dW`: the
/// Lyapunov equation `2 Sigma = 2 tau tau^T` gives `N(b_far, tau tau^T)`.
pub fn ou_analytic_measure(b_far: &[f64], tau_far: &[f64]) -> Result<Gaussian> {
    let m = b_far.len();
    if m == 0 || tau_far.len() != m * m {
        return Err(Error::InvalidInput("tau_far must be m x m".into()));
    }
    let cov = gram(tau_far, m, m);
    let lmin = sym_min_eigenvalue(&cov, m);
    let scale = cov.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(lmin > 1e-14 * scale.max(1e-300)) {
        return Err(Error::DegenerateModel("tau_far is degenerate".into()));
    }
    Ok(Gaussian {
        mean: b_far.to_vec(),
        cov,
    })
}

/// `integral |sigma(xbar, y)^T pbar|^2 dmu(y)` over the discrete measure.
pub fn effective_h_super(spec: &ModelSpec, xbar: &[f64], pbar: &[f64], mu: &InvariantMeasureField) -> Result<f64> {
    if (mu.mass - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!("measure mass {} is not 1", mu.mass)));
    }
    if xbar.len() != spec.n || pbar.len() != spec.n {
        return Err(Error::InvalidInput("xbar and pbar must have length n".into()));
    }
    let v = mu.expectation(|y| spec.forcing(xbar, y, pbar));
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: format!("effective Hamiltonian integral at x = {xbar:?}, p = {pbar:?}"),
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{BumpSigma, ConstantSigma, OuFast};

    fn std_normal_pdf(y: &[f64]) -> f64 {
        (-0.5 * y[0] * y[0]).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn standard_ou_density() {
        let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(3.0).unwrap();
        let grid = FastGrid::new(1, 8.0, 0.05).unwrap();
        let mu = solve_stationary_fp(&spec, &grid).unwrap();
        assert!((mu.density[grid.center()] - 0.398942).abs() < 1e-3);
        assert!((mu.mass - 1.0).abs() <= 1e-10);
        assert!(mu.density.iter().all(|d| *d >= 0.0));
        assert!(mu.residual <= 1e-10);
    }

    #[test]
    fn shifted_ou_peak() {
        let fast = OuFast::new(vec![1.0], vec![1.0]).unwrap();
        let spec = ConstantSigma::new(vec![1.0], vec![0.0], fast.tau.clone(), fast.b_far.clone())
            .unwrap()
            .spec(3.0)
            .unwrap();
        let grid = FastGrid::new(1, 8.0, 0.05).unwrap();
        let mu = solve_stationary_fp(&spec, &grid).unwrap();
        let y = grid.point(mu.peak())[0];
        assert!((y - 1.0).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn l1_error_is_small_and_refines() {
        let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(3.0).unwrap();
        let e1 = solve_stationary_fp(&spec, &FastGrid::new(1, 8.0, 0.02).unwrap())
            .unwrap()
            .l1_distance(std_normal_pdf);
        let e2 = solve_stationary_fp(&spec, &FastGrid::new(1, 8.0, 0.01).unwrap())
            .unwrap()
            .l1_distance(std_normal_pdf);
        assert!(e1 <= 1e-3, "{e1}");
        assert!(e1 / e2 >= 2.0, "{e1} {e2}");
    }

    #[test]
    fn analytic_ou_law() {
        let g = ou_analytic_measure(&[0.0], &[1.0]).unwrap();
        assert_eq!(g.mean, vec![0.0]);
        assert_eq!(g.cov, vec![1.0]);
        let g = ou_analytic_measure(&[1.0, 0.0], &[1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(g.mean, vec![1.0, 0.0]);
        assert_eq!(g.cov, vec![1.0, 0.0, 0.0, 4.0]);
        assert!((g.pdf(&[1.0, 0.0]) - 1.0 / (2.0 * std::f64::consts::PI * 2.0)).abs() < 1e-14);
        assert!(matches!(ou_analytic_measure(&[0.0], &[0.0]), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn two_d_measure_matches_gaussian() {
        let fast = OuFast::new(vec![0.5, 0.0], vec![1.0, 0.0, 0.3, 0.8]).unwrap();
        let spec = BumpSigma::new(1, 1.0, 0.0, 1.0, vec![0.0], fast.clone())
            .unwrap()
            .spec(3.0)
            .unwrap();
        let grid = FastGrid::new(2, 6.0, 0.1).unwrap();
        let mu = solve_stationary_fp(&spec, &grid).unwrap();
        let g = ou_analytic_measure(&fast.b_far, &fast.tau).unwrap();
        let d = mu.l1_distance(|y| g.pdf(y));
        assert!(d < 1e-2, "{d}");
        let mean0 = mu.expectation(|y| y[0]);
        assert!((mean0 - 0.5).abs() < 1e-3);
    }

    #[test]
    fn supercritical_integrals() {
        let grid = FastGrid::new(1, 8.0, 0.05).unwrap();
        let c = ConstantSigma::one_d(1.3, 0.0, 1.0).spec(3.0).unwrap();
        let mu = solve_stationary_fp(&c, &grid).unwrap();
        let v = effective_h_super(&c, &[0.0], &[2.0], &mu).unwrap();
        assert!((v - 1.69 * 4.0).abs() < 1e-12);
        assert_eq!(effective_h_super(&c, &[0.0], &[0.0], &mu).unwrap(), 0.0);

        let b = BumpSigma::one_d(1.0, 1.0).spec(3.0).unwrap();
        let mu = solve_stationary_fp(&b, &grid).unwrap();
        let v = effective_h_super(&b, &[0.0], &[1.0], &mu).unwrap();
        assert!((v - (1.0 + 3f64.sqrt().recip())).abs() < 1e-3, "{v}");
    }
}

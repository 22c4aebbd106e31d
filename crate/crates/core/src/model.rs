//! The two-scale model: coefficient providers, declared structural constants,
//! sampled sup-norm/Lipschitz bounds, assumption validation and the quadratic
//! Liapounov function of the fast process.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, gram, mat_t_vec, mat_vec, norm2_sq, operator_norm, sym_min_eigenvalue};

/// Coefficients of the two-scale system.
///
/// Matrices are written row-major into caller buffers: `sigma` is `n x m`,
/// `tau` is `m x m`. Implementations must be pure and thread-safe.
pub trait Coefficients: Send + Sync {
    fn phi(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn b(&self, y: &[f64], out: &mut [f64]);
    fn tau(&self, y: &[f64], out: &mut [f64]);

    /// Modulus `g(y, z)` bounding the `y`-oscillation of `sigma`, if known.
    fn s2_modulus(&self, _y: &[f64], _z: &[f64]) -> Option<f64> {
        None
    }
}

/// Slow time-scale regime, fixed by the exponent `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Critical,
    Supercritical,
}

impl Regime {
    pub fn from_alpha(alpha: f64) -> Self {
        if alpha == 2.0 {
            Regime::Critical
        } else {
            Regime::Supercritical
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Critical => write!(f, "critical"),
            Regime::Supercritical => write!(f, "supercritical"),
        }
    }
}

/// Sampled sup-norms (operator norms) and Lipschitz constants.
///
/// Raw sampled values are stored; [`Bounds::inflated`] applies the 10% safety
/// margin used by downstream bound checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub sigma_sup: f64,
    pub tau_sup: f64,
    pub phi_sup: f64,
    pub sigma_lip_x: f64,
    pub sigma_lip_y: f64,
    pub b_lip: f64,
}

pub const BOUNDS_INFLATION: f64 = 1.1;

impl Bounds {
    pub fn inflated(&self) -> Bounds {
        let k = BOUNDS_INFLATION;
        Bounds {
            sigma_sup: k * self.sigma_sup,
            tau_sup: k * self.tau_sup,
            phi_sup: k * self.phi_sup,
            sigma_lip_x: k * self.sigma_lip_x,
            sigma_lip_y: k * self.sigma_lip_y,
            b_lip: k * self.b_lip,
        }
    }
}

/// Declared structure of a two-scale model together with its coefficients.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    coeffs: Arc<dyn Coefficients>,
    /// Constant `B` and radius `R` of the ergodicity condition.
    pub b_ergodic: f64,
    pub r_ergodic: f64,
    /// Ornstein-Uhlenbeck structure beyond radius `r1`.
    pub b_far: Vec<f64>,
    pub tau_far: Vec<f64>,
    pub r1: f64,
    /// True when `b(y) = b_far - y` and `tau = tau_far` for every `y`.
    pub globally_ou: bool,
    pub theta: f64,
    pub nu: Option<f64>,
    bounds: Bounds,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("alpha", &self.alpha)
            .field("b_ergodic", &self.b_ergodic)
            .field("r_ergodic", &self.r_ergodic)
            .field("r1", &self.r1)
            .field("theta", &self.theta)
            .field("nu", &self.nu)
            .field("bounds", &self.bounds)
            .finish()
    }
}

pub struct ModelSpecBuilder {
    name: String,
    n: usize,
    m: usize,
    alpha: f64,
    coeffs: Arc<dyn Coefficients>,
    b_ergodic: f64,
    r_ergodic: f64,
    b_far: Option<Vec<f64>>,
    tau_far: Option<Vec<f64>>,
    r1: f64,
    globally_ou: bool,
    theta: f64,
    nu: Option<f64>,
}

impl ModelSpecBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn ergodicity(mut self, b: f64, r: f64) -> Self {
        self.b_ergodic = b;
        self.r_ergodic = r;
        self
    }

    pub fn ou_far(mut self, b_far: Vec<f64>, tau_far: Vec<f64>, r1: f64) -> Self {
        self.b_far = Some(b_far);
        self.tau_far = Some(tau_far);
        self.r1 = r1;
        self
    }

    pub fn globally_ou(mut self, yes: bool) -> Self {
        self.globally_ou = yes;
        self
    }

    pub fn theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn nu(mut self, nu: Option<f64>) -> Self {
        self.nu = nu;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("dimensions must be >= 1".into()));
        }
        if !(self.alpha >= 2.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "alpha must be >= 2, got {}",
                self.alpha
            )));
        }
        if !(self.theta > 0.0) {
            return Err(Error::InvalidInput("theta must be > 0".into()));
        }
        if !(self.b_ergodic > 0.0 && self.r_ergodic > 0.0 && self.r1 > 0.0) {
            return Err(Error::InvalidInput("B, R and R1 must be > 0".into()));
        }
        match (self.alpha > 2.0, self.nu) {
            (true, None) => {
                return Err(Error::InvalidInput("nu is required when alpha > 2".into()))
            }
            (true, Some(nu)) if !(nu > 0.0) => {
                return Err(Error::InvalidInput("nu must be > 0".into()))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidInput("nu is only declared when alpha > 2".into()))
            }
            _ => {}
        }
        let b_far = self.b_far.unwrap_or_else(|| vec![0.0; m]);
        let tau_far = self.tau_far.unwrap_or_else(|| identity(m));
        if b_far.len() != m || tau_far.len() != m * m {
            return Err(Error::InvalidInput("b_far / tau_far have wrong dimensions".into()));
        }
        let mut spec = ModelSpec {
            name: self.name,
            n,
            m,
            alpha: self.alpha,
            coeffs: self.coeffs,
            b_ergodic: self.b_ergodic,
            r_ergodic: self.r_ergodic,
            b_far,
            tau_far,
            r1: self.r1,
            globally_ou: self.globally_ou,
            theta: self.theta,
            nu: self.nu,
            bounds: Bounds {
                sigma_sup: 0.0,
                tau_sup: 0.0,
                phi_sup: 0.0,
                sigma_lip_x: 0.0,
                sigma_lip_y: 0.0,
                b_lip: 0.0,
            },
        };
        spec.bounds = spec.sample_bounds(4096, 0x5eed_b0d5);
        Ok(spec)
    }
}

pub fn identity(m: usize) -> Vec<f64> {
    let mut id = vec![0.0; m * m];
    for i in 0..m {
        id[i * m + i] = 1.0;
    }
    id
}

impl ModelSpec {
    pub fn builder(n: usize, m: usize, alpha: f64, coeffs: Arc<dyn Coefficients>) -> ModelSpecBuilder {
        ModelSpecBuilder {
            name: "custom".into(),
            n,
            m,
            alpha,
            coeffs,
            b_ergodic: 0.5,
            r_ergodic: 1.0,
            b_far: None,
            tau_far: None,
            r1: 1.0,
            globally_ou: false,
            theta: 0.5,
            nu: None,
        }
    }

    pub fn regime(&self) -> Regime {
        Regime::from_alpha(self.alpha)
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.coeffs
    }

    /// Radius of the validation sampling ball.
    pub fn sampling_radius(&self) -> f64 {
        2.0 * self.r_ergodic.max(self.r1)
    }

    pub fn phi(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.coeffs.phi(x, y, out)
    }

    pub fn sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.coeffs.sigma(x, y, out)
    }

    pub fn b(&self, y: &[f64], out: &mut [f64]) {
        self.coeffs.b(y, out)
    }

    pub fn tau(&self, y: &[f64], out: &mut [f64]) {
        self.coeffs.tau(y, out)
    }

    /// `sigma(x, y)^T p` (an m-vector).
    pub fn sigma_t_p(&self, x: &[f64], y: &[f64], p: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n * self.m];
        self.sigma(x, y, &mut s);
        let mut out = vec![0.0; self.m];
        mat_t_vec(&s, self.n, self.m, p, &mut out);
        out
    }

    /// `|sigma(x, y)^T p|^2`, the forcing of the cell problems.
    pub fn forcing(&self, x: &[f64], y: &[f64], p: &[f64]) -> f64 {
        norm2_sq(&self.sigma_t_p(x, y, p))
    }

    /// `tau(y) sigma(x, y)^T p`, the correlation drift of the critical problem.
    pub fn correlation_drift(&self, x: &[f64], y: &[f64], p: &[f64]) -> Vec<f64> {
        let stp = self.sigma_t_p(x, y, p);
        let mut t = vec![0.0; self.m * self.m];
        self.tau(y, &mut t);
        let mut out = vec![0.0; self.m];
        mat_vec(&t, self.m, self.m, &stp, &mut out);
        out
    }

    /// `tau(y) tau(y)^T`, row-major.
    pub fn diffusion(&self, y: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.m * self.m];
        self.tau(y, &mut t);
        gram(&t, self.m, self.m)
    }

    fn sample_bounds(&self, count: usize, seed: u64) -> Bounds {
        let (n, m) = (self.n, self.m);
        let rho = self.sampling_radius().max(1.0);
        let xs = ball_samples(n, rho, count, seed ^ 0x11);
        let ys = ball_samples(m, rho, count, seed ^ 0x22);
        let dirs_x = ball_samples(n, 1.0, count, seed ^ 0x33);
        let dirs_y = ball_samples(m, 1.0, count, seed ^ 0x44);
        let step = 1e-3 * rho;
        let mut s = vec![0.0; n * m];
        let mut s2 = vec![0.0; n * m];
        let mut t = vec![0.0; m * m];
        let mut f = vec![0.0; n];
        let mut bb = vec![0.0; m];
        let mut bb2 = vec![0.0; m];
        let mut out = Bounds {
            sigma_sup: 0.0,
            tau_sup: 0.0,
            phi_sup: 0.0,
            sigma_lip_x: 0.0,
            sigma_lip_y: 0.0,
            b_lip: 0.0,
        };
        let fin = |v: f64| if v.is_finite() { v } else { 0.0 };
        for i in 0..count {
            let (x, y) = (&xs[i], &ys[i]);
            self.sigma(x, y, &mut s);
            out.sigma_sup = out.sigma_sup.max(fin(operator_norm(&s, n, m)));
            self.tau(y, &mut t);
            out.tau_sup = out.tau_sup.max(fin(operator_norm(&t, m, m)));
            self.phi(x, y, &mut f);
            out.phi_sup = out.phi_sup.max(fin(norm2_sq(&f).sqrt()));

            let dx: Vec<f64> = dirs_x[i].iter().map(|d| d * step).collect();
            let dxn = norm2_sq(&dx).sqrt();
            if dxn > 0.0 {
                let xp: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                self.sigma(&xp, y, &mut s2);
                let d: Vec<f64> = s.iter().zip(&s2).map(|(a, b)| a - b).collect();
                out.sigma_lip_x = out.sigma_lip_x.max(fin(operator_norm(&d, n, m) / dxn));
            }
            let dy: Vec<f64> = dirs_y[i].iter().map(|d| d * step).collect();
            let dyn_ = norm2_sq(&dy).sqrt();
            if dyn_ > 0.0 {
                let yp: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + b).collect();
                self.sigma(x, &yp, &mut s2);
                let d: Vec<f64> = s.iter().zip(&s2).map(|(a, b)| a - b).collect();
                out.sigma_lip_y = out.sigma_lip_y.max(fin(operator_norm(&d, n, m) / dyn_));
                self.b(y, &mut bb);
                self.b(&yp, &mut bb2);
                let d: Vec<f64> = bb.iter().zip(&bb2).map(|(a, b)| a - b).collect();
                out.b_lip = out.b_lip.max(fin(norm2_sq(&d).sqrt() / dyn_));
            }
        }
        out
    }
}

/// Halton radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// `count` quasi-random points in the closed ball of radius `radius` in
/// dimension `dim`: a seeded Cranley-Patterson rotation of a Halton sequence,
/// rejection-sampled from the enclosing cube.
pub fn ball_samples(dim: usize, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(count);
    let mut k = 1u64;
    while out.len() < count {
        let p: Vec<f64> = (0..dim)
            .map(|d| {
                let u = (radical_inverse(k, PRIMES[d % PRIMES.len()]) + shift[d]).fract();
                radius * (2.0 * u - 1.0)
            })
            .collect();
        k += 1;
        if dim == 1 || norm2_sq(&p) <= radius * radius {
            out.push(p);
        }
    }
    out
}

/// Deterministic unit directions: `{+1, -1}` in 1D, equally spaced angles in
/// 2D, normalized quasi-random points otherwise.
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(4))
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count.max(4) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => ball_samples(dim, 1.0, 4 * count, seed)
            .into_iter()
            .filter_map(|p| {
                let r = norm2_sq(&p).sqrt();
                (r > 0.1).then(|| p.iter().map(|v| v / r).collect())
            })
            .take(count)
            .collect(),
    }
}

/// Outcome of one sampled assumption check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub applicable: bool,
    pub pass: bool,
    /// Smallest sampled margin; negative means violated.
    pub worst_margin: f64,
    /// Sample point realizing the worst margin (x followed by y where both
    /// enter), recorded on failure.
    pub witness: Option<Vec<f64>>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub pass: bool,
    pub seed: u64,
    pub sample_budget: usize,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    witness: Option<Vec<f64>>,
    samples: usize,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: f64::INFINITY,
            witness: None,
            samples: 0,
        }
    }

    fn record(&mut self, margin: f64, at: impl FnOnce() -> Vec<f64>) {
        self.samples += 1;
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.worst {
            self.worst = margin;
            self.witness = Some(at());
        }
    }

    fn finish(self, strict: bool) -> AssumptionCheck {
        let pass = if strict { self.worst > 0.0 } else { self.worst >= 0.0 };
        AssumptionCheck {
            name: self.name.into(),
            applicable: true,
            pass,
            worst_margin: self.worst,
            witness: if pass { None } else { self.witness },
            samples: self.samples,
        }
    }
}

fn not_applicable(name: &str) -> AssumptionCheck {
    AssumptionCheck {
        name: name.into(),
        applicable: false,
        pass: true,
        worst_margin: f64::INFINITY,
        witness: None,
        samples: 0,
    }
}

fn finite_all(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Sampling-based verification of the declared structural assumptions.
///
/// Checks uniform non-degeneracy of `tau`, the ergodicity condition (E), the
/// OU-at-infinity condition (U), (S1) when `alpha > 2` and (S2) when a modulus
/// is supplied and `alpha = 2`. A non-finite provider output fails the check
/// it occurred in, with the sample as witness.
pub fn validate_model(spec: &ModelSpec, sample_budget: usize, rng_seed: u64) -> Result<ValidationReport> {
    if sample_budget < 1000 {
        return Err(Error::Precondition(format!(
            "sample_budget must be >= 1000, got {sample_budget}"
        )));
    }
    let (n, m) = (spec.n, spec.m);
    let rho = spec.sampling_radius();
    let n_ball = sample_budget / 2;
    let n_sphere_radii = 8;
    let dirs = sphere_directions(m, (sample_budget - n_ball) / n_sphere_radii, rng_seed ^ 0xd1);
    let ys_ball = ball_samples(m, rho, n_ball, rng_seed ^ 0xa1);
    let xs_ball = ball_samples(n, rho, n_ball, rng_seed ^ 0xa2);

    // Sphere samples at radii spread over (R_min, 2 rho].
    let sphere = |r_lo: f64| -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for k in 1..=n_sphere_radii {
            let r = r_lo * 1.0001 + (2.0 * rho - r_lo) * (k as f64 / n_sphere_radii as f64);
            for d in &dirs {
                pts.push(d.iter().map(|v| v * r).collect::<Vec<f64>>());
            }
        }
        pts
    };

    let mut checks = Vec::new();
    let mut t = vec![0.0; m * m];
    let mut bv = vec![0.0; m];
    let mut s = vec![0.0; n * m];

    // Uniform non-degeneracy of tau.
    let mut nd = Tracker::new("nondegeneracy");
    for y in ys_ball.iter().chain(sphere(0.0).iter()) {
        spec.tau(y, &mut t);
        let margin = if finite_all(&t) {
            sym_min_eigenvalue(&gram(&t, m, m), m) - spec.theta
        } else {
            f64::NEG_INFINITY
        };
        nd.record(margin, || y.clone());
    }
    checks.push(nd.finish(true));

    // (E): b(y).y <= -B |y|^2 beyond R, margin normalized by |y|^2.
    let mut erg = Tracker::new("ergodicity_E");
    for y in ys_ball
        .iter()
        .filter(|y| norm2_sq(y).sqrt() > spec.r_ergodic)
        .chain(sphere(spec.r_ergodic).iter())
    {
        spec.b(y, &mut bv);
        let r2 = norm2_sq(y);
        let margin = if finite_all(&bv) {
            -dot(&bv, y) / r2 - spec.b_ergodic
        } else {
            f64::NEG_INFINITY
        };
        erg.record(margin, || y.clone());
    }
    checks.push(erg.finish(false));

    // (U): exact OU structure beyond R1 (everywhere when declared global).
    let mut ou = Tracker::new("ou_at_infinity_U");
    let u_radius = if spec.globally_ou { 0.0 } else { spec.r1 };
    let far = sphere(u_radius);
    for y in ys_ball
        .iter()
        .filter(|y| norm2_sq(y).sqrt() > u_radius)
        .chain(far.iter())
    {
        spec.b(y, &mut bv);
        spec.tau(y, &mut t);
        let dev_b = bv
            .iter()
            .zip(&spec.b_far)
            .zip(y)
            .map(|((b, bf), yi)| (b - (bf - yi)).abs())
            .fold(0.0, f64::max);
        let dev_t = t
            .iter()
            .zip(&spec.tau_far)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = 1.0 + norm2_sq(y).sqrt();
        let dev = dev_b.max(dev_t);
        let margin = if dev.is_finite() { 1e-12 * scale - dev } else { f64::NEG_INFINITY };
        ou.record(margin, || y.clone());
    }
    checks.push(ou.finish(false));

    // (S1) in the supercritical regime.
    if let (true, Some(nu)) = (spec.alpha > 2.0, spec.nu) {
        let mut s1 = Tracker::new("nondegenerate_sigma_S1");
        for (x, y) in xs_ball.iter().zip(ys_ball.iter()) {
            spec.sigma(x, y, &mut s);
            let margin = if finite_all(&s) {
                sym_min_eigenvalue(&gram(&s, n, m), n) - nu
            } else {
                f64::NEG_INFINITY
            };
            s1.record(margin, || x.iter().chain(y).copied().collect());
        }
        checks.push(s1.finish(false));
    } else {
        checks.push(not_applicable("nondegenerate_sigma_S1"));
    }

    // (S2) when a modulus is provided.
    let probe = vec![0.0; m];
    let has_modulus = spec.coefficients().s2_modulus(&probe, &probe).is_some();
    if spec.alpha == 2.0 && has_modulus {
        let zs = ball_samples(m, rho, n_ball, rng_seed ^ 0xa3);
        let mut s2 = Tracker::new("sigma_modulus_S2");
        let mut sz = vec![0.0; n * m];
        for ((x, y), z) in xs_ball.iter().zip(&ys_ball).zip(&zs) {
            spec.sigma(x, y, &mut s);
            spec.sigma(x, z, &mut sz);
            let dist = norm2_sq(&y.iter().zip(z).map(|(a, b)| a - b).collect::<Vec<_>>()).sqrt();
            let osc = s.iter().zip(&sz).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let g = spec.coefficients().s2_modulus(y, z).unwrap_or(f64::NAN);
            let margin = g * dist - osc + 1e-14;
            s2.record(margin, || x.iter().chain(y).chain(z).copied().collect());
        }
        checks.push(s2.finish(false));
    } else {
        checks.push(not_applicable("sigma_modulus_S2"));
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport {
        checks,
        pass,
        seed: rng_seed,
        sample_budget,
    })
}

/// Quadratic Liapounov function `chi(y) = a |y|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiapounovSpec {
    pub a: f64,
    /// `T = |tau|_inf^2`.
    pub t_tau: f64,
}

impl LiapounovSpec {
    /// Upper end `B / (2T)` of the admissible coefficient range.
    pub fn admissible_sup(&self, b_ergodic: f64) -> f64 {
        b_ergodic / (2.0 * self.t_tau)
    }
}

/// Midpoint rule `a = B / (4 |tau|_inf^2)`.
pub fn liapounov_coefficient(spec: &ModelSpec) -> Result<LiapounovSpec> {
    let t_tau = spec.bounds().tau_sup.powi(2);
    if !(t_tau > 0.0) {
        return Err(Error::DegenerateModel(
            "sup norm of tau is zero; no Liapounov coefficient exists".into(),
        ));
    }
    Ok(LiapounovSpec {
        a: spec.b_ergodic / (4.0 * t_tau),
        t_tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiapounovReport {
    /// `(radius, minimum of G[chi] over the sphere)`.
    pub per_radius: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Evaluates `G[chi](y) = -(b + 2 tau sigma^T p) . Dchi - |tau^T Dchi|^2 - tr(tau tau^T D^2 chi)`.
pub fn liapounov_operator(spec: &ModelSpec, a: f64, xbar: &[f64], pbar: &[f64], y: &[f64]) -> f64 {
    let m = spec.m;
    let mut bv = vec![0.0; m];
    spec.b(y, &mut bv);
    let corr = spec.correlation_drift(xbar, y, pbar);
    let q: Vec<f64> = y.iter().map(|v| 2.0 * a * v).collect();
    let mut t = vec![0.0; m * m];
    spec.tau(y, &mut t);
    let mut ttq = vec![0.0; m];
    mat_t_vec(&t, m, m, &q, &mut ttq);
    let drift: f64 = bv.iter().zip(&corr).zip(&q).map(|((b, c), qi)| (b + 2.0 * c) * qi).sum();
    let trace: f64 = (0..m).map(|i| spec.diffusion(y)[i * m + i]).sum();
    -drift - norm2_sq(&ttq) - 2.0 * a * trace
}

/// Checks that `G[chi]` grows on spheres of increasing radius.
///
/// Passes iff the per-radius minimum is strictly increasing over the radii
/// beyond `R` and positive at the largest radius.
pub fn check_liapounov(
    spec: &ModelSpec,
    lia: &LiapounovSpec,
    xbar: &[f64],
    pbar: &[f64],
    radii: &[f64],
) -> Result<LiapounovReport> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("radii must be nonempty and increasing".into()));
    }
    if *radii.last().unwrap() <= spec.r_ergodic {
        return Err(Error::Precondition(format!(
            "largest radius must exceed R = {}",
            spec.r_ergodic
        )));
    }
    let dirs = sphere_directions(spec.m, 64, 0x51);
    let mut per_radius = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut min = f64::INFINITY;
        for d in &dirs {
            let y: Vec<f64> = d.iter().map(|v| v * r).collect();
            let g = liapounov_operator(spec, lia.a, xbar, pbar, &y);
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("Liapounov operator at y = {y:?}"),
                });
            }
            min = min.min(g);
        }
        per_radius.push((r, min));
    }
    let far: Vec<f64> = per_radius
        .iter()
        .filter(|(r, _)| *r > spec.r_ergodic)
        .map(|(_, g)| *g)
        .collect();
    let increasing = far.windows(2).all(|w| w[1] > w[0]);
    let positive = per_radius.last().map(|(_, g)| *g > 0.0).unwrap_or(false);
    Ok(LiapounovReport {
        per_radius,
        pass: increasing && positive,
    })
}

//! Named parametric model families and a closure-backed provider for tests
//! and ad-hoc experiments.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{gram, norm2_sq, sym_min_eigenvalue};
use crate::model::{identity, Coefficients, ModelSpec};

/// Shared Ornstein-Uhlenbeck fast process `b(y) = b_far - y`, `tau = tau_far`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuFast {
    pub b_far: Vec<f64>,
    pub tau: Vec<f64>,
}

impl OuFast {
    pub fn new(b_far: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        let m = b_far.len();
        if m == 0 || tau.len() != m * m {
            return Err(Error::InvalidInput(format!(
                "tau must be {m}x{m} for a {m}-dimensional fast variable"
            )));
        }
        Ok(Self { b_far, tau })
    }

    pub fn standard(m: usize) -> Self {
        Self {
            b_far: vec![0.0; m],
            tau: identity(m),
        }
    }

    pub fn dim(&self) -> usize {
        self.b_far.len()
    }

    fn b(&self, y: &[f64], out: &mut [f64]) {
        for ((o, bf), yi) in out.iter_mut().zip(&self.b_far).zip(y) {
            *o = bf - yi;
        }
    }

    fn theta(&self) -> f64 {
        let m = self.dim();
        0.9 * sym_min_eigenvalue(&gram(&self.tau, m, m), m)
    }

    /// Radius beyond which `b(y).y <= -B |y|^2` holds with `B = 1/2`.
    fn ergodic_radius(&self) -> f64 {
        (2.0 * norm2_sq(&self.b_far).sqrt()).max(1.0)
    }
}

/// Declared ergodicity constants, overridable per family.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Declared {
    b_ergodic: Option<f64>,
    r_ergodic: Option<f64>,
    theta: Option<f64>,
    nu: Option<f64>,
}

impl Declared {
    const NONE: Declared = Declared {
        b_ergodic: None,
        r_ergodic: None,
        theta: None,
        nu: None,
    };
}

fn positive_or_tiny(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        f64::MIN_POSITIVE
    }
}

/// `sigma` and `phi` constant, global OU fast process.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantSigma {
    pub n: usize,
    pub sigma: Vec<f64>,
    pub phi: Vec<f64>,
    pub fast: OuFast,
    declared: Declared,
}

impl ConstantSigma {
    pub fn new(sigma: Vec<f64>, phi: Vec<f64>, tau: Vec<f64>, b_far: Vec<f64>) -> Result<Self> {
        let fast = OuFast::new(b_far, tau)?;
        let n = phi.len();
        if n == 0 || sigma.len() != n * fast.dim() {
            return Err(Error::InvalidInput("sigma must be n x m".into()));
        }
        Ok(Self {
            n,
            sigma,
            phi,
            fast,
            declared: Declared::NONE,
        })
    }

    pub fn one_d(sigma: f64, phi: f64, tau: f64) -> Self {
        Self::new(vec![sigma], vec![phi], vec![tau], vec![0.0]).expect("scalar shapes are valid")
    }

    pub fn with_ergodicity(mut self, b: f64, r: f64) -> Self {
        self.declared.b_ergodic = Some(b);
        self.declared.r_ergodic = Some(r);
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.declared.theta = Some(theta);
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.declared.nu = Some(nu);
        self
    }

    pub fn spec(&self, alpha: f64) -> Result<ModelSpec> {
        let (n, m) = (self.n, self.fast.dim());
        let nu_default = 0.9 * sym_min_eigenvalue(&gram(&self.sigma, n, m), n);
        build_ou_spec(
            "constant",
            n,
            m,
            alpha,
            Arc::new(self.clone()),
            &self.fast,
            self.declared,
            nu_default,
        )
    }
}

impl Coefficients for ConstantSigma {
    fn phi(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.phi);
    }
    fn sigma(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma);
    }
    fn b(&self, y: &[f64], out: &mut [f64]) {
        self.fast.b(y, out)
    }
    fn tau(&self, _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.fast.tau);
    }
    fn s2_modulus(&self, _y: &[f64], _z: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// Volatility bump: `sigma(x, y) = s0(x) sqrt(1 + beta e^{-|y|^2}) E` with
/// `E_ij = 1` on the diagonal, `s0(x) = s0 (1 + kappa tanh x_1)`, constant
/// drift `phi` and a global OU fast process.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpSigma {
    pub n: usize,
    pub s0: f64,
    pub kappa: f64,
    pub beta: f64,
    pub phi: Vec<f64>,
    pub fast: OuFast,
    declared: Declared,
}

impl BumpSigma {
    pub fn new(n: usize, s0: f64, kappa: f64, beta: f64, phi: Vec<f64>, fast: OuFast) -> Result<Self> {
        if n == 0 || phi.len() != n {
            return Err(Error::InvalidInput("phi must have length n".into()));
        }
        if !(s0 > 0.0) || !(kappa.abs() < 1.0) || !(beta >= 0.0) {
            return Err(Error::InvalidInput(
                "bump family needs s0 > 0, |kappa| < 1, beta >= 0".into(),
            ));
        }
        Ok(Self {
            n,
            s0,
            kappa,
            beta,
            phi,
            fast,
            declared: Declared::NONE,
        })
    }

    /// `n = m = 1`, `phi = 0`, standard OU, `sigma^2 = s0^2 (1 + beta e^{-y^2})`.
    pub fn one_d(s0: f64, beta: f64) -> Self {
        Self::new(1, s0, 0.0, beta, vec![0.0], OuFast::standard(1)).expect("valid parameters")
    }

    pub fn with_ergodicity(mut self, b: f64, r: f64) -> Self {
        self.declared.b_ergodic = Some(b);
        self.declared.r_ergodic = Some(r);
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.declared.theta = Some(theta);
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.declared.nu = Some(nu);
        self
    }

    fn s0_at(&self, x: &[f64]) -> f64 {
        self.s0 * (1.0 + self.kappa * x[0].tanh())
    }

    fn profile(&self, y: &[f64]) -> f64 {
        (1.0 + self.beta * (-norm2_sq(y)).exp()).sqrt()
    }

    pub fn spec(&self, alpha: f64) -> Result<ModelSpec> {
        let (n, m) = (self.n, self.fast.dim());
        let s_min = self.s0 * (1.0 - self.kappa.abs());
        let nu_default = if n <= m { 0.9 * s_min * s_min } else { 0.0 };
        build_ou_spec(
            "bump",
            n,
            m,
            alpha,
            Arc::new(self.clone()),
            &self.fast,
            self.declared,
            nu_default,
        )
    }
}

fn write_identity_like(out: &mut [f64], n: usize, m: usize, scale: f64) {
    out.fill(0.0);
    for i in 0..n.min(m) {
        out[i * m + i] = scale;
    }
}

impl Coefficients for BumpSigma {
    fn phi(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.phi);
    }
    fn sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        write_identity_like(out, self.n, self.fast.dim(), self.s0_at(x) * self.profile(y));
    }
    fn b(&self, y: &[f64], out: &mut [f64]) {
        self.fast.b(y, out)
    }
    fn tau(&self, _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.fast.tau);
    }
    fn s2_modulus(&self, _y: &[f64], _z: &[f64]) -> Option<f64> {
        // sup_r |d/dr sqrt(1 + beta e^{-r^2})| <= beta max_r r e^{-r^2} = beta / sqrt(2e)
        let lip = self.beta / (2.0 * std::f64::consts::E).sqrt();
        Some(self.s0 * (1.0 + self.kappa.abs()) * lip)
    }
}

/// Bump volatility over a fast process that is OU only outside radius `r1`:
/// `b(y) = b_far - y + c psi(y) e_1`, `tau(y) = (1 + gamma psi(y)) tau_far`
/// with `psi(y) = (1 - |y|^2 / r1^2)^2` inside the ball and 0 outside.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedOu {
    pub bump: BumpSigma,
    pub drift_amp: f64,
    pub tau_amp: f64,
    pub r1: f64,
}

impl PerturbedOu {
    pub fn new(bump: BumpSigma, drift_amp: f64, tau_amp: f64, r1: f64) -> Result<Self> {
        if !(r1 > 0.0) || !(tau_amp > -1.0) {
            return Err(Error::InvalidInput("perturbed OU needs r1 > 0 and tau_amp > -1".into()));
        }
        Ok(Self {
            bump,
            drift_amp,
            tau_amp,
            r1,
        })
    }

    fn psi(&self, y: &[f64]) -> f64 {
        let s = norm2_sq(y) / (self.r1 * self.r1);
        if s >= 1.0 {
            0.0
        } else {
            (1.0 - s) * (1.0 - s)
        }
    }

    pub fn spec(&self, alpha: f64) -> Result<ModelSpec> {
        let fast = &self.bump.fast;
        let (n, m) = (self.bump.n, fast.dim());
        let d = self.bump.declared;
        let s_min = self.bump.s0 * (1.0 - self.bump.kappa.abs());
        let shrink = if self.tau_amp < 0.0 { (1.0 + self.tau_amp).powi(2) } else { 1.0 };
        let theta = d.theta.unwrap_or_else(|| positive_or_tiny(fast.theta() * shrink));
        let nu = (alpha > 2.0).then(|| {
            d.nu.unwrap_or_else(|| positive_or_tiny(if n <= m { 0.9 * s_min * s_min } else { 0.0 }))
        });
        ModelSpec::builder(n, m, alpha, Arc::new(self.clone()))
            .name("perturbed_ou")
            .ergodicity(
                d.b_ergodic.unwrap_or(0.5),
                d.r_ergodic.unwrap_or(fast.ergodic_radius().max(self.r1)),
            )
            .ou_far(fast.b_far.clone(), fast.tau.clone(), self.r1)
            .globally_ou(false)
            .theta(theta)
            .nu(nu)
            .build()
    }
}

impl Coefficients for PerturbedOu {
    fn phi(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.bump.phi(x, y, out)
    }
    fn sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.bump.sigma(x, y, out)
    }
    fn b(&self, y: &[f64], out: &mut [f64]) {
        self.bump.fast.b(y, out);
        out[0] += self.drift_amp * self.psi(y);
    }
    fn tau(&self, y: &[f64], out: &mut [f64]) {
        let k = 1.0 + self.tau_amp * self.psi(y);
        for (o, t) in out.iter_mut().zip(&self.bump.fast.tau) {
            *o = k * t;
        }
    }
    fn s2_modulus(&self, y: &[f64], z: &[f64]) -> Option<f64> {
        self.bump.s2_modulus(y, z)
    }
}

#[allow(clippy::too_many_arguments)]
fn build_ou_spec(
    name: &str,
    n: usize,
    m: usize,
    alpha: f64,
    coeffs: Arc<dyn Coefficients>,
    fast: &OuFast,
    d: Declared,
    nu_default: f64,
) -> Result<ModelSpec> {
    let r_default = fast.ergodic_radius();
    ModelSpec::builder(n, m, alpha, coeffs)
        .name(name)
        .ergodicity(d.b_ergodic.unwrap_or(0.5), d.r_ergodic.unwrap_or(r_default))
        .ou_far(fast.b_far.clone(), fast.tau.clone(), 1.0)
        .globally_ou(true)
        .theta(d.theta.unwrap_or_else(|| positive_or_tiny(fast.theta())))
        .nu((alpha > 2.0).then(|| d.nu.unwrap_or_else(|| positive_or_tiny(nu_default))))
        .build()
}

type PhiFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type FastFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Coefficients given by closures. Defaults: `phi = 0`, `sigma = 0`,
/// `b(y) = -y`, `tau = Id`.
#[derive(Clone)]
pub struct FnCoefficients {
    n: usize,
    m: usize,
    phi: Arc<PhiFn>,
    sigma: Arc<PhiFn>,
    b: Arc<FastFn>,
    tau: Arc<FastFn>,
}

impl FnCoefficients {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            phi: Arc::new(|_, _, out| out.fill(0.0)),
            sigma: Arc::new(|_, _, out| out.fill(0.0)),
            b: Arc::new(|y, out| {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = -v;
                }
            }),
            tau: Arc::new(move |_, out| {
                out.fill(0.0);
                for i in 0..m {
                    out[i * m + i] = 1.0;
                }
            }),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn with_phi(mut self, f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.phi = Arc::new(f);
        self
    }

    pub fn with_sigma(mut self, f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.sigma = Arc::new(f);
        self
    }

    pub fn with_b(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.b = Arc::new(f);
        self
    }

    pub fn with_tau(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.tau = Arc::new(f);
        self
    }
}

impl Coefficients for FnCoefficients {
    fn phi(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.phi)(x, y, out)
    }
    fn sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.sigma)(x, y, out)
    }
    fn b(&self, y: &[f64], out: &mut [f64]) {
        (self.b)(y, out)
    }
    fn tau(&self, y: &[f64], out: &mut [f64]) {
        (self.tau)(y, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn bump_sigma_squared_profile() {
        let b = BumpSigma::one_d(1.0, 1.0);
        let mut s = [0.0];
        b.sigma(&[0.3], &[0.0], &mut s);
        assert!((s[0] * s[0] - 2.0).abs() < 1e-14);
        b.sigma(&[0.3], &[1.5], &mut s);
        assert!((s[0] * s[0] - (1.0 + (-2.25f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn families_validate_in_both_regimes() {
        for alpha in [2.0, 3.0] {
            let c = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(alpha).unwrap();
            assert!(validate_model(&c, 1000, 1).unwrap().pass);
            let b = BumpSigma::one_d(1.0, 1.0).spec(alpha).unwrap();
            let r = validate_model(&b, 1000, 1).unwrap();
            assert!(r.pass, "{r:?}");
        }
        let fast = OuFast::new(vec![0.5, 0.0], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let b2 = BumpSigma::new(1, 0.8, 0.3, 1.0, vec![0.1], fast).unwrap();
        assert!(validate_model(&b2.spec(2.0).unwrap(), 2000, 5).unwrap().pass);
    }

    #[test]
    fn perturbed_ou_is_ou_only_far_away() {
        let p = PerturbedOu::new(BumpSigma::one_d(1.0, 1.0), 0.5, 0.2, 1.5).unwrap();
        let spec = p.spec(2.0).unwrap();
        let r = validate_model(&spec, 2000, 2).unwrap();
        assert!(r.pass, "{r:?}");
        let mut out = [0.0];
        p.b(&[0.0], &mut out);
        assert_eq!(out[0], 0.5);
        p.b(&[2.0], &mut out);
        assert_eq!(out[0], -2.0);

        // Declaring it globally OU must be caught.
        let wrong = ModelSpec::builder(1, 1, 2.0, Arc::new(p.clone()))
            .ou_far(vec![0.0], vec![1.0], 1.5)
            .globally_ou(true)
            .ergodicity(0.5, 1.5)
            .build()
            .unwrap();
        assert!(!validate_model(&wrong, 1000, 2).unwrap().check("ou_at_infinity_U").unwrap().pass);
    }

    #[test]
    fn bounds_are_sampled() {
        let spec = BumpSigma::one_d(1.0, 1.0).spec(2.0).unwrap();
        let b = spec.bounds();
        assert!((b.sigma_sup - 2f64.sqrt()).abs() < 1e-3);
        assert_eq!(b.tau_sup, 1.0);
        assert!(b.sigma_lip_y > 0.3 && b.sigma_lip_y < 0.5);
        assert!((spec.bounds().inflated().tau_sup - 1.1).abs() < 1e-15);
    }

    #[test]
    fn shapes_are_checked() {
        assert!(ConstantSigma::new(vec![1.0, 2.0], vec![0.0], vec![1.0], vec![0.0]).is_err());
        assert!(OuFast::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(BumpSigma::new(1, 1.0, 1.5, 1.0, vec![0.0], OuFast::standard(1)).is_err());
    }
}

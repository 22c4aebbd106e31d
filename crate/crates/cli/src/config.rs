//! Run configuration (TOML). Unknown keys are rejected everywhere.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use twoscale_core::epspde::PdeGrid;
use twoscale_core::families::{BumpSigma, ConstantSigma, OuFast, PerturbedOu};
use twoscale_core::grid::{FastGrid, TensorGrid};
use twoscale_core::mc::RegionSet;
use twoscale_core::model::ModelSpec;
use twoscale_core::payoff::StandardPayoff;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Cell,
    Measure,
    Effham,
    Hj,
    Rate,
    Mc,
    Pde2d,
    Ldp,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 9] = [
        Stage::Validate,
        Stage::Cell,
        Stage::Measure,
        Stage::Effham,
        Stage::Hj,
        Stage::Rate,
        Stage::Mc,
        Stage::Pde2d,
        Stage::Ldp,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: Option<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Empty: every stage that has a section.
    #[serde(default)]
    pub stages: Vec<Stage>,
    pub model: ModelConfig,
    pub fast_grid: FastGridConfig,
    pub validate: Option<ValidateConfig>,
    pub cell: Option<CellConfig>,
    pub measure: Option<MeasureConfig>,
    pub effham: Option<EffhamConfig>,
    pub hj: Option<HjConfig>,
    pub rate: Option<RateConfig>,
    pub mc: Option<McConfig>,
    pub pde2d: Option<Pde2dConfig>,
    pub ldp: Option<LdpConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    /// `[B, R]` of the ergodicity condition; family default when absent.
    pub ergodicity: Option<[f64; 2]>,
    pub theta: Option<f64>,
    pub nu: Option<f64>,
    pub family: FamilyConfig,
}

fn zeros1() -> Vec<f64> {
    vec![0.0]
}

fn one1() -> Vec<f64> {
    vec![1.0]
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// Constant `sigma` (row-major `n x m`) over a global OU fast process.
    #[serde(alias = "constant")]
    Ou {
        sigma: Vec<f64>,
        #[serde(default = "zeros1")]
        phi: Vec<f64>,
        #[serde(default = "one1")]
        tau: Vec<f64>,
        #[serde(default = "zeros1")]
        b_far: Vec<f64>,
    },
    /// `s0 (1 + kappa tanh x_1) sqrt(1 + beta e^{-|y|^2})` profile.
    Bump {
        #[serde(default = "one")]
        s0: f64,
        #[serde(default)]
        kappa: f64,
        beta: f64,
        #[serde(default = "zeros1")]
        phi: Vec<f64>,
        #[serde(default = "one1")]
        tau: Vec<f64>,
        #[serde(default = "zeros1")]
        b_far: Vec<f64>,
    },
    /// Bump profile over a fast process that is OU only outside `r1`.
    PerturbedOu {
        #[serde(default = "one")]
        s0: f64,
        #[serde(default)]
        kappa: f64,
        beta: f64,
        #[serde(default = "zeros1")]
        phi: Vec<f64>,
        #[serde(default = "one1")]
        tau: Vec<f64>,
        #[serde(default = "zeros1")]
        b_far: Vec<f64>,
        drift_amp: f64,
        tau_amp: f64,
        r1: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastGridConfig {
    pub y_max: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub budget: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

fn default_lipschitz_deltas() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub points: Vec<NodePoint>,
    /// Vanishing-discount sequence; library default when absent.
    pub deltas: Option<Vec<f64>>,
    #[serde(default = "default_lipschitz_deltas")]
    pub lipschitz_deltas: Vec<f64>,
    pub lipschitz_tol: f64,
    pub doubling_tol: f64,
    pub crosscheck_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    /// L1 tolerance against the analytic Gaussian (global OU families only).
    pub l1_tol: f64,
}

/// Uniform axis `lo, lo + step, ..., hi`, the same on every dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl AxisSpec {
    pub fn grid(&self, dims: usize) -> Result<TensorGrid, CliError> {
        Ok(TensorGrid::uniform(dims, self.lo, self.hi, self.step)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffhamConfig {
    pub x: AxisSpec,
    pub p: AxisSpec,
    pub deltas: Option<Vec<f64>>,
    /// Samples per fast axis for the property suite.
    pub y_sample: usize,
    /// Tolerance of the constant-sigma identity check (relative).
    pub identity_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjConfig {
    pub payoff: StandardPayoff,
    pub t: f64,
    pub x: AxisSpec,
    pub cfl: f64,
    pub probe: Vec<f64>,
    /// Sup-error tolerance against the Hopf-Lax formula (constant family).
    pub oracle_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub q: AxisSpec,
    pub state: AxisSpec,
    pub x0: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    pub t: f64,
    pub k_steps: usize,
    /// Relative tolerance against `|x - x0|^2 / (4 c t)` (constant family).
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub eps: Vec<f64>,
    pub t: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub payoff: StandardPayoff,
    pub n_paths: usize,
    pub dt: f64,
    /// Allowed deviation from the Gaussian closed form, in standard errors.
    pub oracle_se: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pde2dConfig {
    pub grid: PdeGrid,
    pub dt: f64,
    /// Snapshot times written besides `0` and `T`.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// `|pde - mc| <= se_factor * SE + abs_tol`.
    pub se_factor: f64,
    pub abs_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub eps: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub ratio: f64,
    /// Also run the two-scale PDE (n = m = 1) on this grid.
    pub pde_grid: Option<PdeGrid>,
    pub pde_dt: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub set: RegionSet,
    pub t: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub eps: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub k_steps: usize,
    pub q: AxisSpec,
    pub state: AxisSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    pub convergence: Option<ConvergenceConfig>,
    pub tail: Option<TailConfig>,
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<(), CliError> {
    if v.is_empty() {
        Err(CliError::Config(format!("{name} must be nonempty")))
    } else {
        Ok(())
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(one_line(&e.to_string())))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Stages to run: the configured list, or every stage with a section.
    pub fn selected_stages(&self) -> Vec<Stage> {
        if !self.stages.is_empty() {
            let mut s = self.stages.clone();
            s.sort();
            s.dedup();
            return s;
        }
        Stage::ALL.into_iter().filter(|s| self.has_section(*s)).collect()
    }

    pub fn has_section(&self, s: Stage) -> bool {
        match s {
            Stage::Validate => self.validate.is_some(),
            Stage::Cell => self.cell.is_some(),
            Stage::Measure => self.measure.is_some(),
            Stage::Effham => self.effham.is_some(),
            Stage::Hj => self.hj.is_some(),
            Stage::Rate => self.rate.is_some(),
            Stage::Mc => self.mc.is_some(),
            Stage::Pde2d => self.pde2d.is_some(),
            Stage::Ldp => self.ldp.is_some(),
        }
    }

    fn check(&self) -> Result<(), CliError> {
        positive("fast_grid.y_max", self.fast_grid.y_max)?;
        positive("fast_grid.h", self.fast_grid.h)?;
        for s in &self.stages {
            if !self.has_section(*s) {
                return Err(CliError::Config(format!("stage `{s}` selected but its section is missing")));
            }
        }
        if let Some(c) = &self.validate {
            if c.budget == 0 {
                return Err(CliError::Config("validate.budget must be positive".into()));
            }
        }
        if let Some(c) = &self.cell {
            nonempty("cell.points", &c.points)?;
            nonempty("cell.lipschitz_deltas", &c.lipschitz_deltas)?;
            positive("cell.lipschitz_tol", c.lipschitz_tol)?;
            positive("cell.doubling_tol", c.doubling_tol)?;
            positive("cell.crosscheck_tol", c.crosscheck_tol)?;
        }
        if let Some(c) = &self.measure {
            positive("measure.l1_tol", c.l1_tol)?;
        }
        if let Some(c) = &self.effham {
            positive("effham.identity_tol", c.identity_tol)?;
            if c.y_sample == 0 {
                return Err(CliError::Config("effham.y_sample must be positive".into()));
            }
        }
        if let Some(c) = &self.hj {
            positive("hj.t", c.t)?;
            positive("hj.cfl", c.cfl)?;
            positive("hj.oracle_tol", c.oracle_tol)?;
        }
        if let Some(c) = &self.rate {
            nonempty("rate.targets", &c.targets)?;
            positive("rate.t", c.t)?;
            positive("rate.rel_tol", c.rel_tol)?;
        }
        if let Some(c) = &self.mc {
            nonempty("mc.eps", &c.eps)?;
            positive("mc.t", c.t)?;
            positive("mc.dt", c.dt)?;
            positive("mc.oracle_se", c.oracle_se)?;
        }
        if let Some(c) = &self.pde2d {
            if self.mc.is_none() {
                return Err(CliError::Config("pde2d reuses the [mc] parameters; add an [mc] section".into()));
            }
            positive("pde2d.dt", c.dt)?;
            positive("pde2d.se_factor", c.se_factor)?;
            positive("pde2d.abs_tol", c.abs_tol)?;
        }
        if let Some(l) = &self.ldp {
            if let Some(c) = &l.convergence {
                nonempty("ldp.convergence.eps", &c.eps)?;
                positive("ldp.convergence.ratio", c.ratio)?;
                positive("ldp.convergence.dt", c.dt)?;
                if c.pde_grid.is_some() != c.pde_dt.is_some() {
                    return Err(CliError::Config("ldp.convergence needs both pde_grid and pde_dt, or neither".into()));
                }
            }
            if let Some(c) = &l.tail {
                nonempty("ldp.tail.eps", &c.eps)?;
                positive("ldp.tail.t", c.t)?;
                positive("ldp.tail.dt", c.dt)?;
            }
        }
        Ok(())
    }

    pub fn fast_grid(&self, m: usize) -> Result<FastGrid, CliError> {
        Ok(FastGrid::new(m, self.fast_grid.y_max, self.fast_grid.h)?)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ModelConfig {
    pub fn family_name(&self) -> &'static str {
        match self.family {
            FamilyConfig::Ou { .. } => "ou",
            FamilyConfig::Bump { .. } => "bump",
            FamilyConfig::PerturbedOu { .. } => "perturbed_ou",
        }
    }

    /// Constant `sigma` and `phi` when the family has them.
    pub fn constant_coefficients(&self) -> Option<(&[f64], &[f64])> {
        match &self.family {
            FamilyConfig::Ou { sigma, phi, .. } => Some((sigma, phi)),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<ModelSpec, CliError> {
        let spec = match &self.family {
            FamilyConfig::Ou { sigma, phi, tau, b_far } => {
                let mut c = ConstantSigma::new(sigma.clone(), phi.clone(), tau.clone(), b_far.clone())?;
                if let Some([b, r]) = self.ergodicity {
                    c = c.with_ergodicity(b, r);
                }
                if let Some(t) = self.theta {
                    c = c.with_theta(t);
                }
                if let Some(v) = self.nu {
                    c = c.with_nu(v);
                }
                c.spec(self.alpha)?
            }
            FamilyConfig::Bump {
                s0,
                kappa,
                beta,
                phi,
                tau,
                b_far,
            } => self.bump(*s0, *kappa, *beta, phi, tau, b_far)?.spec(self.alpha)?,
            FamilyConfig::PerturbedOu {
                s0,
                kappa,
                beta,
                phi,
                tau,
                b_far,
                drift_amp,
                tau_amp,
                r1,
            } => {
                let bump = self.bump(*s0, *kappa, *beta, phi, tau, b_far)?;
                PerturbedOu::new(bump, *drift_amp, *tau_amp, *r1)?.spec(self.alpha)?
            }
        };
        Ok(spec)
    }

    fn bump(&self, s0: f64, kappa: f64, beta: f64, phi: &[f64], tau: &[f64], b_far: &[f64]) -> Result<BumpSigma, CliError> {
        let fast = OuFast::new(b_far.to_vec(), tau.to_vec())?;
        let mut b = BumpSigma::new(phi.len(), s0, kappa, beta, phi.to_vec(), fast)?;
        if let Some([e, r]) = self.ergodicity {
            b = b.with_ergodicity(e, r);
        }
        if let Some(t) = self.theta {
            b = b.with_theta(t);
        }
        if let Some(v) = self.nu {
            b = b.with_nu(v);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
[model]
alpha = 2.0
[model.family]
name = "ou"
sigma = [1.0]
[fast_grid]
y_max = 8.0
h = 0.05
[validate]
budget = 2000
"#;

    #[test]
    fn minimal_parses() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.selected_stages(), vec![Stage::Validate]);
        let spec = c.model.build().unwrap();
        assert_eq!((spec.n, spec.m), (1, 1));
    }

    #[test]
    fn unknown_family_is_named() {
        let bad = MINIMAL.replace("name = \"ou\"", "name = \"foo\"");
        let err = RunConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("foo"), "{err}");
        assert!(!err.contains('\n'));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = MINIMAL.replace("budget = 2000", "budget = 2000\nbudgett = 1");
        assert!(RunConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("sigma = [1.0]", "sigma = [1.0]\nsigmaa = 2");
        assert!(RunConfig::from_toml(&bad).is_err());
    }
}

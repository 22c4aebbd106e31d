//! Batch driver: reads a TOML run configuration, executes the selected
//! stages and writes CSV artifacts plus `summary.json`.

pub mod config;
mod stages;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use config::{RunConfig, Stage};
pub use stages::Runner;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error(transparent)]
    Core(#[from] twoscale_core::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// One evaluated criterion.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub stage: Stage,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub model: String,
    pub alpha: f64,
    pub stages: Vec<Stage>,
    pub artifacts: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

impl Summary {
    /// 0 when every verdict passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// Runs `stages` in dependency order and writes `summary.json` into `out`.
pub fn run(cfg: &RunConfig, out: &Path, stages: &[Stage]) -> Result<Summary, CliError> {
    let mut runner = Runner::new(cfg, out)?;
    let mut order = stages.to_vec();
    order.sort();
    order.dedup();
    for s in &order {
        if !cfg.has_section(*s) {
            return Err(CliError::Config(format!("stage `{s}` selected but its section is missing")));
        }
    }
    for s in &order {
        log::info!("stage {s}");
        runner.run_stage(*s)?;
    }
    runner.finish(order)
}

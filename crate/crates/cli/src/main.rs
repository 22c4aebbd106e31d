use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use twoscale_cli::{run, CliError, RunConfig, Stage};

#[derive(Parser, Debug)]
#[command(name = "twoscale", version, about = "Two-scale stochastic volatility pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict `run` to these stages (repeatable).
    #[arg(long, global = true, value_enum)]
    stage: Vec<Stage>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    Validate,
    Cell,
    Measure,
    Effham,
    Hj,
    Rate,
    Mc,
    Pde2d,
    Ldp,
    /// Every selected stage in dependency order.
    Run,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Validate => Stage::Validate,
            Command::Cell => Stage::Cell,
            Command::Measure => Stage::Measure,
            Command::Effham => Stage::Effham,
            Command::Hj => Stage::Hj,
            Command::Rate => Stage::Rate,
            Command::Mc => Stage::Mc,
            Command::Pde2d => Stage::Pde2d,
            Command::Ldp => Stage::Ldp,
            Command::Run => return None,
        })
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::from_path(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let stages = match cli.command.stage() {
        Some(s) => vec![s],
        None if !cli.stage.is_empty() => cli.stage,
        None => cfg.selected_stages(),
    };
    if stages.is_empty() {
        return Err(CliError::Config("no stage selected and no stage section present".into()));
    }
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("twoscale-out"));
    let summary = run(&cfg, &out, &stages)?;
    let failed: Vec<&str> = summary
        .verdicts
        .iter()
        .filter(|v| v.status != twoscale_cli::Status::Pass)
        .map(|v| v.name.as_str())
        .collect();
    println!(
        "{}: {} verdicts, {} not passing{}",
        summary.name,
        summary.verdicts.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line harness around the library: closed-form analysis,
//! simulation with confidence intervals, heavy-traffic sweeps, and
//! simulation-backed validation of the stationary identities.
//!
//! Experiments are described by a JSON config (see [`ExperimentConfig`]);
//! every command writes its reports into an output directory and prints a
//! short summary to stdout. Exit codes: 0 success, 2 config/usage error,
//! 3 model error (bad or unstable model), 4 validation failure.

mod commands;
mod config;
mod report;

pub use config::{BuiltModel, ExperimentConfig, ModelConfig};
pub use report::{render_csv, CsvRow, CSV_HEADER};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::sim::SimError;

#[derive(Debug)]
pub enum HarnessError {
    /// Problem with the config file, CLI arguments, or output paths.
    Config(String),
    /// The model itself is invalid or unstable for the requested run.
    Model(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Model(_) => 3,
        }
    }

    fn model<E: std::fmt::Display>(e: E) -> Self {
        HarnessError::Model(e.to_string())
    }

    fn sim(e: SimError) -> Self {
        match e {
            // Run-length parameters come from the config.
            SimError::InvalidParameter { .. } => HarnessError::Config(e.to_string()),
            _ => HarnessError::Model(e.to_string()),
        }
    }
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Config(msg) => write!(f, "config: {msg}"),
            HarnessError::Model(msg) => write!(f, "model: {msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

#[derive(Debug, Parser)]
#[command(
    name = "mmq",
    version,
    about = "Analysis and simulation of Markov-modulated queues with \
             discriminatory processor sharing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form quantities: loads, offset vector, mean workloads,
    /// and the state-space collapse prediction.
    Analyze(CommonArgs),
    /// Event-driven simulation with batch-means confidence intervals.
    Simulate(CommonArgs),
    /// Sweep the heavy-traffic index N and compare scaled simulation
    /// estimates against the limit predictions.
    HtSweep(CommonArgs),
    /// Check the stationary identities against simulation estimates.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the RNG seed (precedence: --seed, MMQ_SEED, config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (precedence: --out, MMQ_OUT, config out_dir, ".").
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::HtSweep(_) => "ht-sweep",
            Command::Validate(_) => "validate",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Analyze(a)
            | Command::Simulate(a)
            | Command::HtSweep(a)
            | Command::Validate(a) => a,
        }
    }
}

fn resolve_seed(args: &CommonArgs, cfg: &ExperimentConfig) -> Result<u64, HarnessError> {
    if let Some(s) = args.seed {
        return Ok(s);
    }
    match std::env::var("MMQ_SEED") {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().map_err(|e| {
            HarnessError::Config(format!("MMQ_SEED must be an unsigned integer: {e}"))
        }),
        _ => Ok(cfg.seed_or_default()),
    }
}

fn resolve_out(args: &CommonArgs, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = &args.out {
        return p.clone();
    }
    if let Some(v) = std::env::var_os("MMQ_OUT") {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    let args = cli.command.args();
    let cfg = ExperimentConfig::load(&args.config)?;
    cfg.ensure_mode(cli.command.name())?;
    let seed = resolve_seed(args, &cfg)?;
    let out = resolve_out(args, &cfg);
    match cli.command {
        Command::Analyze(_) => commands::cmd_analyze(&cfg, &out),
        Command::Simulate(_) => commands::cmd_simulate(&cfg, &out, seed),
        Command::HtSweep(_) => commands::cmd_ht_sweep(&cfg, &out, seed),
        Command::Validate(_) => commands::cmd_validate(&cfg, &out, seed),
    }
}

/// Entry point for the `mmq` binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

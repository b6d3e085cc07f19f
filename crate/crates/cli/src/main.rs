//! Command-line front end: config ingestion, subcommand dispatch, and
//! machine-readable outputs.
//!
//! Exit codes: 0 success or positive verdict, 2 negative verdict,
//! 1 internal assertion failure, 64 usage or parse error.

mod config;
mod record;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use record::digest_bytes;
use tasks::{RunStatus, TaskContext};

#[derive(Parser)]
#[command(
    name = "impstab",
    about = "Synthesis and verification of periodic impulse feedback laws",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Write the result record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write trajectory samples (j, t_j, norm_pre, norm_post) here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Override the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the value-iteration period budget.
    #[arg(long)]
    max_periods: Option<usize>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Constant-estimation mode: search or sufficient.
    #[arg(long, value_parser = ["search", "sufficient"])]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the periodic equation and synthesize the feedback law.
    Synthesize(CommonArgs),
    /// Simulate the closed loop (explicit or synthesized feedback).
    Simulate(CommonArgs),
    /// Weak-observability constants and optional steering.
    CheckObs(CommonArgs),
    /// Rank tests, decomposition, and schedule classes for heat systems.
    HeatAnalyze(CommonArgs),
    /// Randomized verdict-agreement battery.
    Battery(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Synthesize(a)
            | Command::Simulate(a)
            | Command::CheckObs(a)
            | Command::HeatAnalyze(a)
            | Command::Battery(a) => a,
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<(RunConfig, String), String> {
    let bytes = std::fs::read(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let mut cfg: RunConfig =
        serde_json::from_slice(&bytes).map_err(|e| format!("config parse error: {e}"))?;
    if let Some(tol) = args.tol {
        cfg.solver.tol = tol;
    }
    if let Some(mp) = args.max_periods {
        cfg.solver.max_periods = mp;
    }
    if let Some(seed) = args.seed {
        cfg.solver.seed = seed;
    }
    Ok((cfg, digest_bytes(&bytes)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args = cli.command.args();
    let (cfg, digest) = match load_config(args) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(64);
        }
    };
    let ctx = TaskContext {
        cfg: &cfg,
        digest,
        out: args.out.as_deref(),
        csv: args.csv.as_deref(),
        mode: args.mode.as_deref(),
    };
    let result = match &cli.command {
        Command::Synthesize(_) => tasks::run_synthesize(&ctx),
        Command::Simulate(_) => tasks::run_simulate(&ctx),
        Command::CheckObs(_) => tasks::run_check_obs(&ctx),
        Command::HeatAnalyze(_) => tasks::run_heat_analyze(&ctx),
        Command::Battery(_) => tasks::run_battery(&ctx),
    };
    match result {
        Ok(RunStatus::Positive) => ExitCode::SUCCESS,
        Ok(RunStatus::VerdictNegative) => ExitCode::from(2),
        Ok(RunStatus::AssertionFailure) => ExitCode::from(1),
        Err(msg) => {
            // Configuration-shaped problems are usage errors; anything that
            // got past validation is an internal failure.
            let usage = msg.contains("needs")
                || msg.contains("expected")
                || msg.contains("parse")
                || msg.contains("unknown")
                || msg.contains("violates")
                || msg.contains("must");
            eprintln!("error: {msg}");
            ExitCode::from(if usage { 64 } else { 1 })
        }
    }
}

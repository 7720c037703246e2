//! Experiment harness for the feeder laboratory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod commands;
mod config;
mod logs;
mod seeds;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "feederlab",
    about = "Voltage control and renewable accommodation laboratory for radial feeders",
    version
)]
struct Cli {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override configuration keys, e.g. --set ddpg.batch_size=64.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (overrides the config value).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DDPG agent and evaluate the learned policy.
    Train,
    /// Evaluate the configured policy (ddpg, hho, gwo, or random).
    Eval,
    /// Sweep simultaneous generator-fault counts and measure recovery.
    FaultTest,
    /// Train/evaluate across objective-weight values.
    SweepWeights,
    /// Print system characteristics of the configured case.
    CaseInfo,
    /// Verify gradients of every learnable module against finite differences.
    GradCheck,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::resolve(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Train => commands::cmd_train(&config, &cli.out),
        Command::Eval => commands::cmd_eval(&config, &cli.out),
        Command::FaultTest => commands::cmd_fault_test(&config, &cli.out),
        Command::SweepWeights => commands::cmd_sweep_weights(&config, &cli.out),
        Command::CaseInfo => commands::cmd_case_info(&config),
        Command::GradCheck => commands::cmd_grad_check(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

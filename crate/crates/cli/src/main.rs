//! Batch experiment driver for the spectral Ornstein-Uhlenbeck
//! laboratory: semigroup simulation, convexity constants and their
//! verification, thickness certificates, empirical observability,
//! initial-data reconstruction, and stability sweeps.
//!
//! Every command is deterministic given (config, seed): rerunning
//! produces byte-identical artifacts. Exit codes: 0 success, 2 config
//! error, 3 numerical-guard error, 4 solver failure.

mod commands;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oulab_core::error::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(CoreError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidInput(_) | CoreError::Format(_) | CoreError::Io(_) => 2,
                CoreError::DomainTruncation { .. }
                | CoreError::Convergence { .. }
                | CoreError::Degenerate(_)
                | CoreError::OutOfRegime(_) => 3,
                CoreError::SolverFailure { .. } => 4,
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "oulab",
    about = "Spectral laboratory for the Ornstein-Uhlenbeck semigroup: \
             convexity, observability, and initial-data reconstruction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides [run].seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the initial state and write snapshots plus a norm table.
    Simulate(CommonArgs),
    /// Compute the convexity constants and verify the quadratic-form bound.
    Constants(CommonArgs),
    /// Evaluate the logarithmic-convexity ratio along a trajectory.
    VerifyConvexity(CommonArgs),
    /// Certify (γ, a)-thickness of the observation set.
    Thickness(CommonArgs),
    /// Empirical final-state observability ratios over the standard ensemble.
    Observability(CommonArgs),
    /// Reconstruct the initial state from a masked observation record.
    Reconstruct(CommonArgs),
    /// Noise sweep tracing the logarithmic stability curve.
    Sweep(CommonArgs),
}

type CommandFn = fn(&config::ExperimentConfig, &Path, &Path, u64) -> Result<(), CliError>;

fn run(common: &CommonArgs, f: CommandFn) -> Result<(), CliError> {
    let cfg = config::ExperimentConfig::load(&common.config)?;
    let base = common
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", common.out.display())))?;
    let seed = cfg.seed(common.seed);
    f(&cfg, &base, &common.out, seed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => run(c, commands::cmd_simulate),
        Command::Constants(c) => run(c, commands::cmd_constants),
        Command::VerifyConvexity(c) => run(c, commands::cmd_verify_convexity),
        Command::Thickness(c) => run(c, commands::cmd_thickness),
        Command::Observability(c) => run(c, commands::cmd_observability),
        Command::Reconstruct(c) => run(c, commands::cmd_reconstruct),
        Command::Sweep(c) => run(c, commands::cmd_sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oulab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Io("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Core(CoreError::InvalidInput("x".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::Core(CoreError::DomainTruncation {
                mass_fraction: 1e-3,
                threshold: 1e-6
            })
            .exit_code(),
            3
        );
        assert_eq!(
            CliError::Core(CoreError::Degenerate("x".into())).exit_code(),
            3
        );
        assert_eq!(
            CliError::Core(CoreError::SolverFailure {
                iterations: 5,
                message: "x".into()
            })
            .exit_code(),
            4
        );
    }
}

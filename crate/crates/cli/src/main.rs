//! `cmde` command-line entry point.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CommandKind, Invocation};
use config::CliError;

#[derive(Parser, Debug)]
#[command(name = "cmde", version, about = "Causal multi-task deep ensembles and their GP oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// JSON configuration for the command.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; all available cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// Replaces the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset.
    Gen(RunArgs),
    /// Train an ensemble and save a checkpoint.
    Train(RunArgs),
    /// Predict potential outcomes and effects from a checkpoint.
    Predict(RunArgs),
    /// Fit the exact multi-task GP and write its posterior.
    GpFit(RunArgs),
    /// Score predictions against ground truth.
    Eval(RunArgs),
    /// Compare untrained-ensemble covariance with the analytic kernel.
    KernelCheck(RunArgs),
    /// Train on the synthetic benchmark and plot against the GP.
    FigSynthetic(RunArgs),
}

impl Command {
    fn split(self) -> (CommandKind, RunArgs) {
        match self {
            Command::Gen(a) => (CommandKind::Gen, a),
            Command::Train(a) => (CommandKind::Train, a),
            Command::Predict(a) => (CommandKind::Predict, a),
            Command::GpFit(a) => (CommandKind::GpFit, a),
            Command::Eval(a) => (CommandKind::Eval, a),
            Command::KernelCheck(a) => (CommandKind::KernelCheck, a),
            Command::FigSynthetic(a) => (CommandKind::FigSynthetic, a),
        }
    }
}

fn execute(kind: CommandKind, args: RunArgs) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::field("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let inv = Invocation {
        config: args.config,
        out: args.out,
        seed: args.seed,
    };
    commands::run(kind, &inv)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CMDE_LOG", "error")).init();
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

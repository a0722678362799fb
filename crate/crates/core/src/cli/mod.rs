//! `koopgen train|predict|mpc|validate --config <path> [--seed N] [--out DIR]`
//!
//! Exit codes: 0 success, 1 numerical failure (including failed validation
//! checks), 2 usage or configuration error.

pub mod commands;
pub mod config;
pub mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::KoopError;
use commands::Context;
use config::LoadedConfig;

#[derive(Debug, Parser)]
#[command(name = "koopgen", version, about = "Bilinear Koopman surrogate models and model predictive control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample or load data, fit a model, write model.txt and train_summary.json.
    Train(CommonArgs),
    /// Predict with a model (and the plant) and write prediction.csv.
    Predict(CommonArgs),
    /// Run the closed loop and write mpc.csv and mpc_summary.json.
    Mpc(CommonArgs),
    /// Check a model file and write validation.json.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config and KOOPGEN_OUTPUT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    pub plot_script: bool,
}

pub const EXIT_NUMERICAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub fn exit_code(e: &KoopError) -> u8 {
    match e {
        KoopError::FitFailure { .. } | KoopError::Numerical(_) => EXIT_NUMERICAL,
        KoopError::InvalidInput(_)
        | KoopError::Unsupported(_)
        | KoopError::OutOfDomain(_)
        | KoopError::Io(_)
        | KoopError::Parse(_) => EXIT_USAGE,
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let (Command::Train(args) | Command::Predict(args) | Command::Mpc(args) | Command::Validate(args)) = &cli.command;
    let result = LoadedConfig::from_path(&args.config).and_then(|config| {
        let ctx = Context {
            seed: config.seed(args.seed),
            out: config.output_dir(args.out.as_deref()),
            plot_script: args.plot_script,
            config,
        };
        match &cli.command {
            Command::Train(_) => commands::train(&ctx).map(|_| true),
            Command::Predict(_) => commands::predict(&ctx).map(|_| true),
            Command::Mpc(_) => commands::mpc(&ctx).map(|_| true),
            Command::Validate(_) => commands::validate(&ctx).map(|r| r.passed),
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

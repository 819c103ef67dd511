//! `dpgn`: simulate graph PDEs, generate datasets, train and evaluate models.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration,
//! 3 numerical divergence, 4 missing checkpoint.

mod commands;
mod options;

use std::process::ExitCode;

use clap::Parser;

use dpgn::checkpoint::CheckpointError;
use dpgn::pde::PdeError;
use dpgn::train::TrainError;

use options::{Cli, Command, ConfigError};

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::InvalidConfig { .. } => return 2,
                TrainError::NonFiniteLoss { .. } => return 3,
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<PdeError>() {
            match e {
                PdeError::NonFiniteState { .. } => return 3,
                PdeError::InvalidSpec(_) | PdeError::NegativeNoise(_) | PdeError::BadInitCount { .. } => return 2,
                _ => {}
            }
        }
        if let Some(CheckpointError::Missing(_)) = cause.downcast_ref::<CheckpointError>() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let level = std::env::var("DPGN_LOG_LEVEL").unwrap_or_else(|_| "warn".to_string());
    env_logger::Builder::new()
        .parse_filters(&level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Inductive(args) => commands::inductive(args),
        Command::Horizon(args) => commands::horizon(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

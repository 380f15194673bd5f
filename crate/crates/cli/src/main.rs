mod args;
mod commands;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command, Engine};

/// How a run ends; the variant picks the exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing required argument {0}")]
    Missing(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] amerikan::ConfigError),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    /// The run completed but at least one check failed.
    #[error("{0}")]
    CheckFailed(String),
}

impl From<amerikan::Error> for CliError {
    fn from(e: amerikan::Error) -> Self {
        match e {
            amerikan::Error::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Price(Engine::Tree(a)) => a.resolve().and_then(commands::price_tree),
        Command::Price(Engine::Pde(a)) => a.resolve().and_then(commands::price_pde),
        Command::Price(Engine::Bsde(a)) => a.resolve().and_then(commands::price_bsde),
        Command::Boundary(a) => a.resolve().and_then(commands::boundary),
        Command::Kprocess(a) => a.resolve().and_then(commands::kprocess),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Missing(arg)) => {
            let mut cmd = Cli::command();
            cmd.error(
                clap::error::ErrorKind::MissingRequiredArgument,
                format!("missing required argument {arg}"),
            )
            .exit()
        }
        Err(e @ (CliError::Usage(_) | CliError::Config(_))) => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;

use growreg::harness::HarnessError;
use growreg::quadratic_lab::QuadError;
use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    /// Bad flags, config, or input files.
    pub const VALIDATION: u8 = 2;
    /// Failure while running: divergence, budget exhausted, I/O on outputs.
    pub const RUNTIME: u8 = 3;
    /// The command ran but a checked tolerance was not met.
    pub const ACCEPTANCE: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input { .. } | CliError::Usage(_) | CliError::Quad(_) => exit::VALIDATION,
            CliError::Harness(h) => match h {
                HarnessError::Config(_) | HarnessError::Dataset(_) | HarnessError::Group(_) => exit::VALIDATION,
                HarnessError::Sched(growreg::scheduler::SchedError::InvalidConfig(_)) => exit::VALIDATION,
                _ => exit::RUNTIME,
            },
            CliError::Output { .. } => exit::RUNTIME,
            CliError::Acceptance(_) => exit::ACCEPTANCE,
        }
    }

    pub fn input(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CliError::Input { path: path.into(), msg: msg.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

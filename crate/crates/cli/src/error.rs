//! Error classes of the command line, one per exit code.

use std::process::ExitCode;

/// Every failure of a subcommand maps onto one of three exit codes:
/// 2 for configuration problems, 3 for input-data problems (datasets,
/// checkpoints, metrics files), 4 for everything that goes wrong while
/// actually running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(3),
            CliError::Runtime(_) => ExitCode::from(4),
        }
    }
}

impl From<pruneclust_core::Error> for CliError {
    fn from(e: pruneclust_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, missing or invalid input data.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(3),
        }
    }
}

impl From<berrysmith_core::Error> for CliError {
    fn from(e: berrysmith_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub const EXIT_INTERNAL: u8 = 4;

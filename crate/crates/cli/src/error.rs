use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Numeric(_) => ExitCode::from(3),
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

impl From<lrtv4d_core::Error> for CliError {
    fn from(e: lrtv4d_core::Error) -> Self {
        match e {
            lrtv4d_core::Error::Numeric(m) => CliError::Numeric(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

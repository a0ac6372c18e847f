//! Error bucketing for exit codes: validation problems (bad flags, config,
//! or input files) exit 1, runtime failures exit 2.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "{e:#}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Input or configuration problem: exit code 1.
pub fn validation(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(err.into())
}

/// Failure while doing the work: exit code 2.
pub fn runtime(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(err.into())
}

pub trait Context<T> {
    fn or_validation(self, msg: &str) -> CliResult<T>;
    fn or_runtime(self, msg: &str) -> CliResult<T>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> Context<T> for Result<T, E> {
    fn or_validation(self, msg: &str) -> CliResult<T> {
        self.map_err(|e| validation(anyhow::Error::new(e).context(msg.to_string())))
    }

    fn or_runtime(self, msg: &str) -> CliResult<T> {
        self.map_err(|e| runtime(anyhow::Error::new(e).context(msg.to_string())))
    }
}

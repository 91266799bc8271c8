//! Command implementations behind the `siformer` binary.

pub mod commands;
pub mod config;
pub mod report;

/// Errors split by exit code: validation problems exit 1, runtime
/// failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<siformer::Error> for CliError {
    fn from(err: siformer::Error) -> Self {
        match err {
            siformer::Error::Io { .. } => CliError::Runtime(err.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

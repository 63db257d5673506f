use std::fmt;

use emsaformer_core::Error as CoreError;

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or inconsistent input files and bad arguments.
    Input(String),
    /// The weight file failed validation or does not fit the request.
    Weights(String),
    /// Anything else, including failed self-tests.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Weights(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Weights(m) => write!(f, "weight error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Load(l) => CliError::Weights(l.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn input(what: impl fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Input(format!("{what}: {e}"))
}

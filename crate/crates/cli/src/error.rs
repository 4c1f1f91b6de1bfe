use std::fmt;
use std::path::Path;

/// A failed run. Validation errors are the caller's fault (bad flags or
/// inputs) and exit with 1; anything else exits with 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<mvc_core::Error> for CliError {
    fn from(e: mvc_core::Error) -> Self {
        match e {
            mvc_core::Error::NonFiniteValue { .. } => CliError::Internal(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

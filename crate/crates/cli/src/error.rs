use std::path::Path;

/// Failure classes that map onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn read(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Config(format!("cannot read {}: {e}", path.display()))
    }

    pub fn write(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Internal(format!("cannot write {}: {e}", path.display()))
    }
}

impl From<twomirror_core::Error> for CliError {
    fn from(e: twomirror_core::Error) -> Self {
        use twomirror_core::Error as E;
        match e {
            E::Config(_) | E::InvalidGeometry(_) | E::LimitViolation { .. } => CliError::Config(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

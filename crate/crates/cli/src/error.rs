use thiserror::Error;

/// Failures grouped by the exit code they produce.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] slidenet::Error),
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use slidenet::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(E::InvalidArgument(_) | E::Precondition(_)) => 2,
            CliError::Core(E::Divergence { .. }) => 4,
            CliError::Core(_) => 3,
            CliError::Consistency(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

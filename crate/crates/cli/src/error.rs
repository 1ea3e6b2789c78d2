use thiserror::Error;

/// Failures mapped onto the exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or command line (exit 2).
    #[error("{0}")]
    Config(String),
    /// Malformed or inconsistent data (exit 2).
    #[error("{0}")]
    Data(String),
    /// File system failure (exit 3).
    #[error("{0}")]
    Io(String),
    /// The optimizer did not converge; results were still written (exit 4).
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(_) => 2,
            CliError::Io(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }
}

impl From<dynevent::Error> for CliError {
    fn from(e: dynevent::Error) -> Self {
        match &e {
            dynevent::Error::Io(_) => CliError::Io(e.to_string()),
            dynevent::Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        dynevent::Error::from(e).into()
    }
}

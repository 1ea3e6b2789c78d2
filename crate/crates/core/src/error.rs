use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("{what} is not positive semi-definite")]
    NotPositiveSemiDefinite { what: String },

    #[error(
        "covariance of unit {unit} is numerically singular (jitter up to {max_jitter:e} failed)"
    )]
    SingularCovariance { unit: usize, max_jitter: f64 },

    #[error("covariance is numerically singular (jitter up to {max_jitter:e} failed)")]
    Singular { max_jitter: f64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("regressor matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    CollinearRegressors { columns: Vec<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid panel data at line {line}, column `{column}`: {reason}")]
    Data {
        line: usize,
        column: String,
        reason: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A gradient or iterate became non-finite. Carries the last finite iterate.
    #[error("non-finite value at iteration {iteration}")]
    NumericOverflow { iteration: usize, iterate: Vec<f64> },

    #[error("singular tridiagonal system at row {0}")]
    SingularSystem(usize),

    #[error("all {0} trials aborted")]
    AllTrialsAborted(usize),

    #[error("not available: {0}")]
    NotAvailable(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

//! Crate-wide error type. Every rejection carries the failing quantity or
//! inequality spelled out, so harness users see actionable messages rather
//! than bare variant names.

/// Unified error for construction, numerics, configuration, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violated its domain; the message quotes the failing inequality.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    /// An eigenvalue list would exceed the unit trace budget.
    #[error("trace budget exceeded: {0}")]
    TraceBudget(String),
    /// Matrix/vector shapes are incompatible for the requested operation.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    /// A numerical routine left its contract (non-finite values, failed convergence).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Experiment configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),
    /// Filesystem trouble while reading configs or writing results.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for `InvalidParam` with formatted content.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}

use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("coefficient violates assumptions: {0}")]
    Coefficient(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("exponential sum could not be certified: {0}")]
    Certification(String),
    #[error("materialization of {rows}x{cols} exceeds size guard {limit}")]
    TooLarge {
        rows: usize,
        cols: usize,
        limit: usize,
    },
    #[error("{0} is not available for this case")]
    Unavailable(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

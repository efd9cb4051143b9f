use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A structural precondition was violated (odd order, unsorted points, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A size cap was exceeded.
    #[error("size error: {0}")]
    Size(String),
    /// A numerical result is less accurate than the operation guarantees.
    #[error("accuracy error: {0}")]
    Accuracy(String),
    /// An experiment or simulation configuration is unusable.
    #[error("configuration error: {0}")]
    Config(String),
    /// Not enough data for the requested estimator.
    #[error("sample-size error: {0}")]
    SampleSize(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

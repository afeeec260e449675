use thiserror::Error;

/// Errors surfaced by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad shape, empty input,
    /// out-of-range parameter).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A computation produced a non-finite value where a finite one is
    /// required.
    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::NumericFailure(msg.into())
}

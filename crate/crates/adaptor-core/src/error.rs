//! Error type shared across the crate.

use alloc::string::String;

/// Errors raised by tensor math, model construction, training, and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Shape or dimension contract violated (mismatched operands, non-scalar
    /// loss, empty inputs).
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Numeric failure: non-finite values where finite ones are required,
    /// domain violations such as `log` of a non-positive value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Invalid configuration or argument value.
    #[error("config error: {0}")]
    Config(String),
    /// Operation used in the wrong order, e.g. a second backward pass over a
    /// graph that has already been consumed.
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}

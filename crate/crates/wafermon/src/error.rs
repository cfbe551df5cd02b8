//! Crate-wide error taxonomy.
//!
//! Errors fall into three buckets that the CLI maps onto distinct exit
//! codes: configuration problems (bad parameters, inconsistent shapes),
//! data problems (malformed files, degenerate inputs), and contract
//! violations (an API precondition broken by the caller).

use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed, out-of-range, or degenerate input data.
    #[error("data error: {0}")]
    Data(String),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

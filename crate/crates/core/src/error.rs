use alloc::string::String;

use thiserror::Error;

/// Errors raised by the design, model and flow routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point {0} lies outside the closed domain")]
    OutOfDomain(String),

    /// A configuration value violates its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A particle update produced NaN or infinity, usually because the step
    /// size is too large for the model.
    #[error("non-finite particle update at iteration {iteration}")]
    NonFinite { iteration: usize },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// True for errors caused by invalid user input or configuration.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidParameter { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

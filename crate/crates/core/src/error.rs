use thiserror::Error;

/// Errors raised by the oracle engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("dimension mismatch: expected length {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("exact enumeration of S_{n} exceeds the cap of n = {max}; use a sampled ensemble instead")]
    Capacity { n: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("incompatible rule and loss: {0}")]
    Incompatible(String),

    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(OracleError::Dimension { expected, found })
    }
}

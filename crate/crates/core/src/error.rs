use thiserror::Error;

/// Errors produced by the estimation, simulation and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two inputs that must be aligned have different lengths.
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    /// The joint VaR-ES score is undefined for a non-negative ES.
    #[error("score undefined at step {step}: ES = {es} must be negative")]
    ScoreUndefined { step: usize, es: f64 },

    /// The optimizer could not produce a finite objective value.
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

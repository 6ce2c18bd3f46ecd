//! Error type shared by the whole engine.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A coefficient, payoff or rate produced a non-finite value. The time and
    /// state are carried so the offending path is diagnosable.
    #[error("non-finite value from {what} at t={t}, x={state:?}")]
    NonFinite {
        what: &'static str,
        t: f64,
        state: Vec<f64>,
    },

    /// A duration or horizon does not line up with the grid it must tile.
    #[error("{what}={value} is not aligned with step {step}")]
    GridMisaligned {
        what: &'static str,
        value: f64,
        step: f64,
    },

    #[error("lag {lag} outside [{lo}, {hi}]")]
    LagOutOfRange { lag: f64, lo: f64, hi: f64 },

    /// The killing rate exceeded its declared sup-norm bound.
    #[error("killing rate {rate} exceeds declared bound {bound} at t={t}")]
    RateBoundExceeded { rate: f64, bound: f64, t: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

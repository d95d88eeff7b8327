//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the numerical, privacy and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An input contained NaN or an infinity where finite data is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Two objects that must share an ambient dimension do not.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A parameter violated a documented precondition.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An operation that needs at least one element received none.
    #[error("empty input to {0}")]
    Empty(&'static str),

    /// Two balls that were asked to form a localized domain do not intersect.
    #[error("empty intersection: center distance {distance} exceeds radius sum {radius_sum}")]
    EmptyIntersection { distance: f64, radius_sum: f64 },

    /// Dykstra's alternating projections did not settle within the sweep limit.
    #[error("projection did not converge after {sweeps} sweeps (last displacement {residual:e})")]
    ProjectionNotConverged { sweeps: usize, residual: f64 },

    /// A shuffle-protocol parameter set is infeasible.
    #[error("shuffle protocol parameters infeasible: {0}")]
    Protocol(String),

    /// Malformed experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A sweep trial produced an inconsistent result.
    #[error("trial failed: {0}")]
    Trial(String),

    /// Reading or writing files failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV encoding or decoding failed.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON encoding or decoding failed.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

//! Error taxonomy shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: unsupported primitive, invalid schema, out-of-range setting.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its contract (non-scalar output, shape
    /// mismatch, mismatched curvatures, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An argument left the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A direction vector too small to differentiate along.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    /// A denominator collapsed below the numerical guard.
    #[error("near-singular denominator: {0}")]
    NearSingular(String),

    /// A point reached the boundary of the Poincaré ball.
    #[error("ball boundary reached: {0}")]
    Boundary(String),

    /// A size cap was exceeded (oracle dimension, leaf count, ...).
    #[error("size limit exceeded: {0}")]
    Size(String),

    /// Input data could not be parsed.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Rejection sampling failed to produce a valid instance.
    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

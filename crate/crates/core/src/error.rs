//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the numerics, receiver and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix was numerically singular during elimination.
    #[error("singular matrix: pivot magnitude {pivot:.3e} below threshold")]
    SingularMatrix { pivot: f64 },

    /// The rank-1 inversion-lemma denominator vanished.
    #[error("singular rank-1 update: denominator magnitude {denom:.3e}")]
    SingularUpdate { denom: f64 },

    /// Inverse power iteration failed to converge.
    #[error("eigenvector iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    /// A constraint vector collapsed to (numerically) zero, which signals a
    /// broken signature or channel estimate upstream.
    #[error("degenerate constraint: norm {norm:.3e}")]
    DegenerateConstraint { norm: f64 },

    /// The phase reference handed to the detector was zero.
    #[error("degenerate phase reference")]
    DegenerateReference,

    /// An exhaustive pattern bank would exceed the configured cap.
    #[error("pattern bank of {requested} branches exceeds cap {cap}")]
    CapacityExceeded { requested: u64, cap: u64 },

    /// A configuration field failed validation.
    #[error("config error at `{field}`: {message}")]
    ConfigValidation { field: String, message: String },

    /// I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigValidation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

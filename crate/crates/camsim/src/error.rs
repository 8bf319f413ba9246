//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter records, malformed configs, bad patterns.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// IV fitting failed (degenerate sweep, no usable points).
    #[error("device fit failed: {0}")]
    Fit(String),

    /// DC Newton iteration did not converge.
    #[error("dc solve failed: worst residual {residual_a:.3e} A at net '{net}'")]
    DcNoConvergence {
        net: String,
        residual_a: f64,
        /// Last iterate, for diagnostics.
        last: Vec<(String, f64)>,
    },

    /// Transient step failed even after step-halving retries.
    #[error("transient solve failed at step {step} (t = {time_s:.4e} s): {reason}")]
    Transient {
        step: usize,
        time_s: f64,
        reason: String,
    },

    /// Comparator reference could not be placed between the measured levels.
    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

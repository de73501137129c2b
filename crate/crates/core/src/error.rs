use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PricingError>;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("{what} is outside its domain at {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("could not bracket varphi^-1({target}) within |w| <= {limit}")]
    Bracket { target: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("line search failed at objective {objective} (iterate {iterate:?})")]
    LineSearch { objective: f64, iterate: Vec<f64> },

    #[error("config error: {0}")]
    Config(String),

    #[error("round {round} of trial {seed}: {source}")]
    Trial {
        seed: u64,
        round: usize,
        #[source]
        source: Box<PricingError>,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(PricingError::NonFinite { what, value })
    }
}

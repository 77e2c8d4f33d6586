use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum HopError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite state at t = {t:.6} s")]
    NonFiniteState { t: f64 },

    #[error("event localization did not converge at t = {t:.6} s")]
    EventNotConverged { t: f64 },

    #[error("step budget of {limit} steps exceeded at t = {t:.6} s")]
    StepLimit { limit: u64, t: f64 },

    #[error("no root in [{lo}, {hi}]: {reason}")]
    NoRoot { lo: f64, hi: f64, reason: String },

    #[error("input implies unbounded rise (denominator {denominator:.6} <= 0)")]
    UnboundedRise { denominator: f64 },

    #[error("cycle is missing required events: {0}")]
    MissingEvents(String),

    #[error("no hopping cycles found in trajectory")]
    NoCycles,

    #[error("insufficient speed range: span {span:.3} m/s (need at least {required:.1} m/s)")]
    InsufficientSpeedRange { span: f64, required: f64 },

    #[error("search budget exhausted without improvement after {evaluations} evaluations")]
    SearchExhausted { evaluations: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HopError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HopError::InvalidInput(msg.into())
    }

    /// True for failures that come from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HopError::NonFiniteState { .. }
                | HopError::EventNotConverged { .. }
                | HopError::StepLimit { .. }
                | HopError::NoRoot { .. }
                | HopError::UnboundedRise { .. }
                | HopError::SearchExhausted { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, HopError>;

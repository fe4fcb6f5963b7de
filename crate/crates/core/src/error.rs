use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("non-finite evaluation {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("measure has no slice for time {time} (grid covers [{start}, {end}])")]
    MissingSlice { time: f64, start: f64, end: f64 },

    #[error("simulation diverged: particle {particle} at step {step} is not finite")]
    Diverged { particle: usize, step: usize },

    #[error("stochastic exponential overflowed at step {step} (log value {log_value})")]
    Overflow { step: usize, log_value: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(what: impl Into<String>, location: impl Into<String>) -> Self {
        Error::NonFinite {
            what: what.into(),
            location: location.into(),
        }
    }
}

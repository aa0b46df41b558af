use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed a value outside the operation's domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Density evaluated outside the support of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// Every oracle top-K entry is zero, so BPR has no denominator.
    #[error("degenerate outcome: oracle top-{k} sum is zero")]
    DegenerateOutcome { k: usize },

    #[error("non-finite {term} at period {period}: {value}")]
    NonFinite {
        term: &'static str,
        period: usize,
        value: f64,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad numbers rather than bad configuration or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Domain(_) | Error::DegenerateOutcome { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_) | Error::Parse { .. })
    }
}

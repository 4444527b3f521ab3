use thiserror::Error;

/// Errors raised by the CVA engine.
#[derive(Debug, Error)]
pub enum CvaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("event date {date} lies outside [0, {horizon}]")]
    EventOutsideHorizon { date: f64, horizon: f64 },

    #[error("correlation matrix is not positive semi-definite (most negative eigenvalue {eigenvalue:e})")]
    NotPositiveSemiDefinite { eigenvalue: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("scenario provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("value store {path}: {message}")]
    Store { path: String, message: String },

    #[error("job {job}: {message}")]
    Job { job: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CvaError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CvaError {
    CvaError::InvalidInput(msg.into())
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("grad requires scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("blow-up: non-finite state at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: &'static str, epoch: usize, batch: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("integrity error in `{field}`: {reason}")]
    Integrity { field: String, reason: String },

    #[error("unsupported manifest version {0} (expected 1)")]
    UnsupportedVersion(u64),

    #[error("resample rate {rate:.3} exceeds limit ({failures} failed solves for {n} samples)")]
    ResampleLimit { rate: f64, failures: usize, n: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

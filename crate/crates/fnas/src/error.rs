use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{segment}`: expected {expected}, got {got}")]
    Dimension {
        segment: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in `{context}`")]
    Numeric { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("lookup failed for tokens `{0}`")]
    Lookup(String),

    #[error("fairness violation: {0}")]
    Fairness(String),

    #[error("training failed at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("buffer is empty")]
    EmptyBuffer,

    #[error("requested {requested} entries but buffer holds {available}")]
    InsufficientEntries { requested: usize, available: usize },

    #[error("batch composition failed: {0}")]
    Composition(String),

    #[error("trust constraint starved: {drawn} draws produced only {untrusted} untrusted samples (needed {needed})")]
    ConstraintStarvation {
        drawn: usize,
        untrusted: usize,
        needed: usize,
    },

    #[error("transfer rejected: {0}")]
    Transfer(String),

    #[error("statistic undefined: {0}")]
    Statistic(String),

    #[error("runs are not comparable: {0}")]
    Comparability(String),

    #[error("resume rejected: {0}")]
    Resume(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced by the fusion, pipeline, benchmark and metric layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on dimension {dim}: expected {expected}, got {actual}")]
    ShapeMismatch {
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("condition vector length {actual} does not match condition set length {expected}")]
    ConditionLength { expected: usize, actual: usize },

    #[error("unknown fusion variant: {0}")]
    UnknownVariant(String),

    #[error("fusion variant {0} requires a condition vector")]
    MissingConditions(&'static str),

    #[error("schema violation in {file}: {detail}")]
    Schema { file: String, detail: String },

    #[error("vlm backend error: {0}")]
    Vlm(#[from] VlmError),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Errors from vision-language backends, typed per failure mode.
#[derive(Debug, Error)]
pub enum VlmError {
    #[error("network failure: {0}")]
    Network(String),

    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("http status {status}: {detail}")]
    HttpStatus { status: u16, detail: String },

    #[error("schema violation ({schema}): {detail}")]
    SchemaViolation { schema: String, detail: String },

    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn schema(file: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            detail: detail.into(),
        }
    }
}

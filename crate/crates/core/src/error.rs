use thiserror::Error;

/// Errors raised by the numeric core and the experiment harness.
#[derive(Debug, Error)]
pub enum PdrError {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PdrError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        PdrError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit status for this error: 3 for I/O, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PdrError::Io { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PdrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, PdrError>;

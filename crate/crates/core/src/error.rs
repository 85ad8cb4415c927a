use thiserror::Error;

/// Errors raised by the inversion toolkit.
#[derive(Debug, Error)]
pub enum EkiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("degenerate ensemble: {0} successful particles, at least 2 required")]
    DegenerateEnsemble(usize),

    #[error("ill-conditioned system (condition estimate {condition:.3e}): {context}")]
    IllConditioned { context: String, condition: f64 },

    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("deadline exceeded: {0}")]
    Timeout(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema mismatch in {path}: {message}")]
    Schema { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, EkiError>;

impl EkiError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        EkiError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn schema(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        EkiError::Schema {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}

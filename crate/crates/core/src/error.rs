use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("agent {agent}: invalid action index {action} (valid: 0..{count})")]
    InvalidAction { agent: usize, action: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bridge variables do not match the graph: {0}")]
    TopologyMismatch(String),

    #[error("spectral block for eigenvalue {eigenvalue} is singular")]
    SingularBlock { eigenvalue: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("compact-form check needs a recorded trace (enable diag.cache_compact_form)")]
    MissingCache,

    #[error("history has no final parameter snapshot")]
    MissingSnapshot,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

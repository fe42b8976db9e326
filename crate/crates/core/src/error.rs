use std::path::PathBuf;

/// Errors produced anywhere in the reduction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("registration failed: {0}")]
    Registration(String),

    #[error("covariance matrix could not be factorized: {0}")]
    Conditioning(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("internal numerical failure: {0}")]
    Numerical(String),

    #[error("bundle error at {path}: {message}")]
    Bundle { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the service and the CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_) => ErrorKind::Usage,
            Error::Config(_) => ErrorKind::Config,
            Error::Registration(_)
            | Error::Conditioning(_)
            | Error::Training(_)
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Bundle { .. } | Error::Io(_) | Error::Json(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn bundle(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Bundle {
            path: path.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

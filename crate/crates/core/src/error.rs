use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown topic `{0}`")]
    UnknownTopic(String),

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("runtime failure: {0}")]
    Runtime(String),

    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Fold { source, .. } => source.exit_code(),
            Error::Parse { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::UnknownTopic(_)
            | Error::UnknownDocument(_) => 3,
            _ => 4,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

use std::path::PathBuf;

/// One bad line of a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    /// Record id when the line parsed far enough to have one.
    pub id: Option<String>,
    pub message: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id `{id}`): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {} bad record(s):\n  {}", .errors.len(), .errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Manifest { path: PathBuf, errors: Vec<RecordError> },
    #[error("corrupt checkpoint at byte {offset}: {message}")]
    CorruptCheckpoint { offset: usize, message: String },
    #[error("truncated checkpoint: expected at least {expected} bytes, found {actual}")]
    TruncatedCheckpoint { expected: usize, actual: usize },
    #[error("{0}")]
    Config(String),
    #[error("no same-domain baseline: {0}")]
    MissingBaseline(String),
    #[error(transparent)]
    Core(#[from] fusionet_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad input or configuration, 1 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Core(fusionet_core::Error::NumericFault { .. }) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: malformed record: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sample id {id:?} on lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("sample {id:?}: {message}")]
    Invariant { id: String, message: String },

    #[error("sample {id:?} is missing {field}")]
    MissingField { id: String, field: &'static str },

    #[error("language pair mismatch: {left} vs {right}")]
    LanguageMismatch { left: String, right: String },

    #[error("dimension mismatch{}: expected {expected}, found {found}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    DimensionMismatch {
        index: Option<usize>,
        expected: usize,
        found: usize,
    },

    #[error("zero-norm vector{}", id.as_ref().map(|i| format!(" for sample {i:?}")).unwrap_or_default())]
    ZeroNorm { id: Option<String> },

    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("audio format: {0}")]
    AudioFormat(String),

    #[error("{stage} command exited with {status}: {diagnostic}")]
    External {
        stage: String,
        status: String,
        diagnostic: String,
    },

    #[error("trainer did not produce checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("experiment directory {} is locked by another orchestrator", .0.display())]
    Locked(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the CLI: 2 for I/O and external-process failures,
    /// 1 for everything that is a validation problem with the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::External { .. }
            | Error::MissingCheckpoint(_)
            | Error::Locked(_) => 2,
            _ => 1,
        }
    }
}

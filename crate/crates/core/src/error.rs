use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read source file {path}: {source}")]
    SourceRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("build of instrumented subject failed:\n{diagnostics}")]
    Build { diagnostics: String },

    #[error("failed to execute subject: {0}")]
    Exec(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error("unknown conditional {0}")]
    UnknownConditional(String),

    #[error("slice error: {0}")]
    Slice(String),

    #[error("flattened slice exceeds {limit} characters ({actual})")]
    SliceTooLarge { limit: usize, actual: usize },

    #[error("prompt estimate of {tokens} tokens exceeds the limit of {limit}")]
    PromptTooLarge { tokens: usize, limit: usize },

    #[error("solver query budget exhausted")]
    BudgetExhausted,

    #[error("solver request failed: {0}")]
    Solver(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

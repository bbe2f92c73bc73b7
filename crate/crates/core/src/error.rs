use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("notes directory not found: {0}")]
    MissingNotesDir(PathBuf),

    #[error("unknown test case id: {0}")]
    UnknownTestId(String),

    #[error("vector dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero-norm vector has no defined angle")]
    ZeroNorm,

    #[error("non-finite value in embedding vector")]
    NonFinite,

    #[error("k must be at least 1, got {0}")]
    InvalidK(i64),

    #[error("query text is empty")]
    EmptyQuery,

    #[error("case {case_id} has no {mode} to query with")]
    EmptyQueryField { case_id: String, mode: String },

    #[error("embedding provider failed: {0}")]
    Provider(String),

    #[error("embedding failed for cases: {}", .0.join(", "))]
    EmbeddingFailed(Vec<String>),

    #[error("index provider tag {index:?} does not match provider {provider:?}")]
    ProviderMismatch { index: String, provider: String },

    #[error("malformed index file: {0}")]
    IndexFormat(String),

    #[error("{file}: missing required column {column:?}")]
    MissingColumn { file: String, column: String },

    #[error("strategy {strategy} requires {input}")]
    MissingPromptInput { strategy: String, input: String },

    #[error("instruction must not be empty")]
    EmptyInstruction,

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),

    #[error("chat request failed: {0}")]
    Chat(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("malformed run store {path}: {message}")]
    RunStore { path: PathBuf, message: String },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("text produced no tokens")]
    EmptyTokens,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Non-fatal problem found while reading an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub line: Option<usize>,
    pub message: String,
}

impl Warning {
    pub(crate) fn at(line: usize, message: impl Into<String>) -> Self {
        let w = Warning {
            line: Some(line),
            message: message.into(),
        };
        log::warn!("{w}");
        w
    }
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

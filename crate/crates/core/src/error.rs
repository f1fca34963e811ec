use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("empty audio")]
    EmptyAudio,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("polynomial must have degree >= 1")]
    DegreeZero,

    #[error("pole multiset is not conjugate-symmetric")]
    NotConjugateSymmetric,

    #[error("utterance too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("embedding dimension mismatch for `{id}`: expected {expected}, found {found}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid embedding for `{id}`: {reason}")]
    InvalidEmbedding { id: String, reason: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("missing embedding for utterance `{0}`")]
    MissingEmbedding(String),

    #[error("degenerate (zero) mean embedding for model `{0}`")]
    ZeroMeanEmbedding(String),

    #[error("speaker `{speaker}` has {have} usable utterances, needs {need}")]
    InsufficientUtterances {
        speaker: String,
        have: usize,
        need: usize,
    },

    #[error("age group {0} contains no speakers")]
    EmptyAgeGroup(String),

    #[error("score set needs both target and nontarget trials")]
    SingleLabel,

    #[error("reference transcript is empty after normalization")]
    EmptyReference,

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate report record for {0}")]
    DuplicateRecord(String),

    #[error("external system `{system}` produced no usable outputs")]
    NoExternalOutputs { system: String },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

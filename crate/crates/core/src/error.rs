use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("template must contain exactly one rank slot like `{{age}}`, found {found}")]
    MissingSlot { found: usize },

    #[error("need at least {min} ranks, got {got}")]
    TooFewRanks { min: usize, got: usize },

    #[error("rank labels must be strictly increasing (position {index})")]
    UnorderedRanks { index: usize },

    #[error("label `{label}` tokenizes to {len} tokens, more than n_max = {n_max}")]
    RankTooLong { label: String, len: usize, n_max: usize },

    #[error("token id {id} outside embedding table with {vocab} rows")]
    OutOfVocab { id: usize, vocab: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("feature vector norm {norm:e} is too small to normalize")]
    ZeroFeature { norm: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: row {row}: {msg}")]
    LabelRow { path: PathBuf, row: usize, msg: String },

    #[error("training diverged at step {step} (stage {stage}): loss = {value}")]
    Diverged { step: usize, stage: u8, value: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("backbone `{0}` is not registered")]
    UnknownBackbone(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

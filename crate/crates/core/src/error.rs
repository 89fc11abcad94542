use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("ad `{0}` has no images")]
    NoImages(String),

    #[error("ad `{0}` has no extracted identifiers")]
    NoIdentifiers(String),

    #[error("ad `{0}` has no vendor label")]
    MissingLabel(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("anchor with label {0} has no positive in the batch")]
    NoPositive(usize),

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("all loss weights are zero")]
    ZeroWeights,

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("zero vector for id `{0}`")]
    ZeroRow(String),

    #[error("cutoff {k} exceeds index size {n}")]
    Cutoff { k: usize, n: usize },

    #[error("ids are not aligned at row {row}: `{left}` vs `{right}`")]
    Misaligned { row: usize, left: String, right: String },

    #[error("fusion strategy `{0}` requires parameters")]
    MissingFusionParams(&'static str),

    #[error("batch {batch}: label {label} appears only once")]
    SingletonLabel { batch: usize, label: usize },

    #[error("query `{0}` has no relevant documents")]
    NoRelevant(String),

    #[error("{0}")]
    Format(String),

    #[error("checksum mismatch")]
    Checksum,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Degenerate(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed feature file: {0}")]
    MalformedHeader(String),

    #[error("feature payload size mismatch: header declares {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("non-finite feature value at index {index}")]
    NonFinite { index: usize },

    #[error("mask value {value} at index {index} is not 0 or 1")]
    InvalidMaskValue { index: usize, value: u8 },

    #[error("run-length counts sum to {sum}, expected {expected}")]
    RunSumMismatch { sum: u64, expected: u64 },

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("grid mask has no active cells")]
    EmptyGridMask,

    #[error("pooled feature vector is zero")]
    DegenerateFeature,

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("no reference images supplied")]
    NoReferences,

    #[error("duplicate instance (image {image_id}, instance {instance_id})")]
    DuplicateInstance { image_id: u64, instance_id: u64 },

    #[error("bank file: {0}")]
    BankFormat(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("not enough reference images for category {category_id}: need {needed}, have {available}")]
    InsufficientReferences {
        category_id: u32,
        needed: usize,
        available: usize,
    },

    #[error("unknown category {0}")]
    UnknownCategory(u32),

    #[error("synthetic spec: {0}")]
    Synth(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the refinement and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed array header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?} (expected float32, uint8 or uint32)")]
    UnsupportedDtype(String),
    #[error("truncated array data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("duplicate class index {0}")]
    DuplicateClass(usize),
    #[error("channel mismatch: features have {features} channels, weights have {weights}")]
    ChannelMismatch { features: usize, weights: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("grid mismatch: {left:?} vs {right:?}")]
    GridMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("invalid upsampling target {0:?}")]
    InvalidTarget((usize, usize)),
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("k = {k} out of range for n = {n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("invalid attention: {0}")]
    InvalidAttention(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("nothing to evaluate: every pixel is ignored")]
    EmptyEvaluation,
    #[error("oracle limited to n <= {limit}, got n = {n}")]
    OracleSizeExceeded { n: usize, limit: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

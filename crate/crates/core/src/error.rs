use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the liveness pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("tensor shape {shape:?} implies {expected} values, got {got}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("invalid layer hyperparameter: {0}")]
    BadLayer(String),

    #[error("architecture descriptor parse error: {0}")]
    BadArchitecture(String),

    #[error("backward called before a recorded forward pass")]
    BackwardBeforeForward,

    #[error("non-finite gradient in layer {layer} ({param}); step aborted")]
    NonFiniteGradient { layer: usize, param: &'static str },

    #[error("non-finite loss on batch ({detail})")]
    NonFiniteLoss { detail: String },

    #[error("empty batch: at least one pair is required")]
    EmptyBatch,

    #[error("unsupported image magic {found:?} (expected \"P5\" or \"P6\")")]
    UnsupportedMagic { found: String },

    #[error("malformed image header: {0}")]
    BadImageHeader(String),

    #[error("image maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),

    #[error("truncated image payload: expected {expected} bytes, got {got}")]
    TruncatedImage { expected: usize, got: usize },

    #[error("missing split directory {0}")]
    MissingSplit(PathBuf),

    #[error("no clients in split {0}")]
    EmptySplit(String),

    #[error("cannot enroll {client_id}: reference image is labeled fake")]
    FakeReference { client_id: String },

    #[error("client {0} is not enrolled in the gallery")]
    UnknownClient(String),

    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),

    #[error("{context}: need at least one real and one fake sample")]
    MissingClass { context: &'static str },

    #[error("{op}: decision and truth lists differ in length ({decisions} vs {truths})")]
    LengthMismatch {
        op: &'static str,
        decisions: usize,
        truths: usize,
    },

    #[error("rate out of range: {name} = {value} (must lie in [0, 1])")]
    RateOutOfRange { name: &'static str, value: f64 },

    #[error("{file}: bad magic (expected {expected:?})")]
    BadMagic { file: String, expected: String },

    #[error("{file}: unsupported format version {found} (expected {expected})")]
    BadVersion {
        file: String,
        found: u32,
        expected: u32,
    },

    #[error("{file}: truncated ({detail})")]
    TruncatedFile { file: String, detail: String },

    #[error("{file}: {detail}")]
    CorruptFile { file: String, detail: String },

    #[error("parameter data does not match architecture: expected {expected} values, got {got}")]
    ParamCountMismatch { expected: usize, got: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use crate::attention::HeadAddress;

/// Errors produced by any layer of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor dimensions must be nonzero (got {rows}x{cols})")]
    ZeroDim { rows: usize, cols: usize },

    #[error("init scale must be > 0 (got {0})")]
    NonPositiveScale(f64),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("substitute hook at {addr} has no buffer")]
    MissingBuffer { addr: HeadAddress },

    #[error("substitute buffer at {addr} has shape {got}, head output is {expected}")]
    BufferShape {
        addr: HeadAddress,
        expected: String,
        got: String,
    },

    #[error("hook addresses layer {addr} outside {module} (depth {depth}, {heads} heads)")]
    BadAddress {
        addr: HeadAddress,
        module: String,
        depth: usize,
        heads: usize,
    },

    #[error("text contains both gender words")]
    AmbiguousGender,

    #[error("token {0:?} not in model vocabulary")]
    UnknownToken(String),

    #[error("invalid model config: {0}")]
    BadModelConfig(String),

    #[error("invalid injection: {0}")]
    BadInjection(String),

    #[error("invalid generator config: {0}")]
    BadGenConfig(String),

    #[error("invalid experiment config: {field}: {message}")]
    BadExperimentConfig { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("ingest: {0}")]
    Ingest(String),

    #[error("dataset must contain at least {need} images (got {got})")]
    DatasetTooSmall { need: usize, got: usize },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

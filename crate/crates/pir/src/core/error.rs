use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor file does not start with the `TNSR` magic bytes.
    #[error("{path}: bad magic bytes (not a TNSR file)")]
    BadMagic { path: PathBuf },

    /// Tensor dimensions are zero, too many, or their product overflows.
    #[error("{path}: tensor dimension overflow or invalid dims {dims:?}")]
    DimOverflow { path: PathBuf, dims: Vec<u64> },

    /// Tensor payload is shorter than the header promises.
    #[error("{path}: truncated tensor payload (expected {expected} bytes, got {got})")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    /// Tensor data contains NaN or infinity.
    #[error("tensor data contains a non-finite value at index {index}")]
    NonFiniteData { index: usize },

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: String,
    },

    #[error("degenerate SDF gradient at ({x}, {y}, {z}): |grad| = {norm}")]
    DegenerateGradient { x: f64, y: f64, z: f64, norm: f64 },

    #[error("zero distance between surface point and light position")]
    ZeroLightDistance,

    #[error("reflection below horizon: w.n = {cos} <= 0")]
    ReflectionBelowHorizon { cos: f64 },

    #[error("empty level set: SDF has no zero crossing in the unit box")]
    EmptyLevelSet,

    #[error("invalid camera: {reason}")]
    InvalidCamera { reason: String },

    #[error("non-finite loss term `{term}` = {value}")]
    NonFiniteLoss { term: String, value: f64 },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("optimization diverged: {reason}")]
    Diverged { reason: String },

    #[error("feature map error: {reason}")]
    FeatureMap { reason: String },

    #[error("checkpoint error: {reason}")]
    Checkpoint { reason: String },

    #[error("invalid config: {reason}")]
    Config { reason: String },

    #[error("invalid field spec: {reason}")]
    FieldSpec { reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

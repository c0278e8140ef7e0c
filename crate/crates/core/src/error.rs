//! Error type shared across the engine.

use thiserror::Error;

/// Errors produced by dataset handling, model fitting, prediction and search.
#[derive(Debug, Error)]
pub enum OsrError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed content in an activation file, reported with the file line.
    #[error("data format error at line {line}: {message}")]
    DataFormat { line: usize, message: String },

    /// A dataset or manifest violates a structural invariant.
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// Bad user-supplied configuration (ratios, class names, parameter bounds).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class {class:?} has no samples")]
    EmptyClass { class: String },

    #[error("tail size {tail_size} exceeds available distance count {available}")]
    InsufficientTail { tail_size: usize, available: usize },

    #[error("degenerate tail: all {count} tail values are identical")]
    DegenerateTail { count: usize },

    #[error("weibull fit did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("class {class:?} has no correctly classified training samples")]
    NoCorrectSamples { class: String },

    #[error("calibration failed for class {class:?}: {source}")]
    Calibration {
        class: String,
        #[source]
        source: Box<OsrError>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,

    #[error("label {label} out of range for {limit} classes (sample {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        limit: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("scores must contain at least one known and one unknown sample")]
    SingleClassScores,

    #[error("no unknown-labelled samples: AUPR-OUT undefined")]
    NoPositiveSamples,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("objective failed for parameters {params}: {source}")]
    ObjectiveFailed {
        params: String,
        #[source]
        source: Box<OsrError>,
    },

    #[error("search exhausted: all {trials} trials failed")]
    SearchExhausted { trials: usize },

    #[error("unsupported artifact format {found} (expected {expected})")]
    UnsupportedFormat { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, OsrError>;

use std::path::PathBuf;

use thiserror::Error;

use crate::image::BBox;

/// Errors produced by the augmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("line {line}: unknown origin {value:?} (expected real, pbda or iida)")]
    UnknownOrigin { line: usize, value: String },

    #[error("invalid bounding box {bbox:?}: {reason}")]
    InvalidBBox { bbox: BBox, reason: String },

    #[error("embedding file: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("embedding file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("embedding file has {0} trailing bytes after the declared payload")]
    TrailingBytes(usize),

    #[error("non-finite embedding value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("embedding header declares zero {0}")]
    EmptyEmbeddings(&'static str),

    #[error("sample {id:?}: embedding_index {index} out of range for table with {count} rows")]
    EmbeddingIndexOutOfRange {
        id: String,
        index: usize,
        count: usize,
    },

    #[error("sample {0:?} has no embedding_index")]
    MissingEmbedding(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("image has zero dimension ({width}x{height})")]
    ZeroDimension { width: u32, height: u32 },

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("solver did not converge on channel {channel} after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence {
        channel: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("lesion {0:?} has no eligible target: every normal sample shares its patient")]
    NoCandidates(String),

    #[error("no feasible ROI window of size {w}x{h} in a {width}x{height} target")]
    NoFeasibleRoi {
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("empty class list")]
    EmptyClassList,

    #[error("class {0:?} has no samples")]
    EmptyClass(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("class {0:?} has a zero count")]
    ZeroCount(String),

    #[error("insufficient IIDA inventory for class {class:?}: need {needed}, have {available} (short by {})", needed - available)]
    InsufficientInventory {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Job {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps `self` with a description of the job that produced it.
    pub fn in_job(self, context: impl Into<String>) -> Self {
        Error::Job {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed inputs or configuration rather
    /// than a failure while processing valid data.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::NonConvergence { .. } | Error::Codec(_) => false,
            Error::Job { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

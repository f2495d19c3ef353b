use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: domain violation ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: reduction over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("population statistics unavailable")]
    PopulationUnavailable,

    #[error("population statistics for timestep {t} have never been updated")]
    TimestepUnpopulated { t: usize },

    #[error("timestep {t} outside 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("training diverged at update {update}: loss = {loss}")]
    Divergence { update: usize, loss: f64 },

    #[error("idx file {path}: {kind}")]
    Idx { path: PathBuf, kind: IdxErrorKind },

    #[error("dataset is already permuted")]
    AlreadyPermuted,

    #[error("split `{split}` has {available} symbols, need at least {required}")]
    SplitTooShort {
        split: String,
        available: usize,
        required: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxErrorKind {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by the differentiation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{op} does not support higher-order differentiation")]
    UnsupportedDoubleBackward { op: &'static str },
    #[error("variable passed to grad() does not require gradients")]
    NotDifferentiable,
}

/// Failures raised while reading, writing or splitting datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic bytes (expected ASGMAT01)")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated matrix blob ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("dimension mismatch for {what}: manifest says {expected}, file has {found}")]
    DimMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("label {label} at row {row} is out of range (0..{num_classes})")]
    LabelOutOfRange {
        row: usize,
        label: f64,
        num_classes: usize,
    },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic spec: field `{field}` {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("rescaling needs a nonempty reference split")]
    EmptyReference,
    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("access to {0} is sealed")]
    AccessDenied(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Format(String),
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient for parameter {name} (id {id})")]
    NonFiniteGradient { name: String, id: u32 },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error("class {0} has no training samples")]
    EmptyClass(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures caused by bad inputs or configuration rather than
    /// numerical breakdown during a run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteGradient { .. }
                | Error::NonFiniteLoss(_)
                | Error::Autodiff(AutodiffError::NonFinite { .. })
                | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inverse transform left imaginary residue {residue:e} above bound {bound:e}")]
    NonHermitianInput { residue: f64, bound: f64 },

    #[error("grid of {cells} cells exceeds the naive transform limit of {limit}")]
    GridTooLarge { cells: usize, limit: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("featurizer has no spatial intermediate activations")]
    NotConvolutional,

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("domain {domain} has no training samples of class {class}")]
    EmptyCell { domain: usize, class: usize },

    #[error("unknown domain {domain} (have {available})")]
    UnknownDomain { domain: usize, available: usize },

    #[error("need at least 2 domains for cross-domain agreement, found {found}")]
    TooFewDomains { found: usize },

    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("need at least 3 strictly increasing domain counts >= 2, got {0:?}")]
    InsufficientRange(Vec<usize>),

    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid toy spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at iteration {iteration}")]
    Diverged { iteration: u64 },

    #[error("evaluation set is empty")]
    EmptySet,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic number {found:#010x}")]
    BadMagic { found: u32 },

    #[error("unsupported format version {found}")]
    FormatVersionMismatch { found: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Whether the error originated from the filesystem.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("{op}: index {index} out of range for {rows} rows")]
    IndexOutOfRange { op: &'static str, index: usize, rows: usize },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward: loss does not depend on any parameter or gate")]
    Detached,

    #[error("bce: every element is masked out")]
    AllMasked,

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("auc: labels contain no {missing} class")]
    SingleClass { missing: &'static str },

    #[error("{op}: length mismatch ({left} vs {right})")]
    LengthMismatch { op: &'static str, left: usize, right: usize },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("importance profile has no entry for block {block} {kind}")]
    MissingLayer { block: usize, kind: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss} (recent losses {history:?})")]
    Diverged { epoch: usize, batch: usize, loss: f64, history: Vec<f64> },

    #[error("checkpoint: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("checkpoint: version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated ({actual} bytes, expected {expected})")]
    Truncated { expected: u64, actual: u64 },

    #[error("checkpoint: SHA-256 digest mismatch")]
    DigestMismatch,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite { .. } | Error::Diverged { .. } => ErrorClass::Numerical,
            Error::Config(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

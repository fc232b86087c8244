use hiskel_autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what}: need at least {needed}, got {got}")]
    InsufficientLength { what: &'static str, needed: usize, got: usize },
    #[error("{what} {got} exceeds configured capacity {limit}")]
    Capacity { what: &'static str, limit: usize, got: usize },
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("parse error in record {record}: {msg}")]
    Parse { record: usize, msg: String },
    #[error("parse error in header: {0}")]
    Header(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint incompatible: {field} is {found} in checkpoint but {requested} requested")]
    Incompatible { field: String, found: String, requested: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("batch of {0} is too small for in-batch negatives")]
    DegenerateBatch(usize),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

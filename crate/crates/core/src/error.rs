use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("depth must be at least 1")]
    ZeroDepth,

    #[error("non-finite partial denominator {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("continuant K_{index} = {value:e} exceeds the overflow bound")]
    ContinuantOverflow { index: usize, value: f64 },

    #[error("pole guard epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("index {index} out of range (valid: {lo}..={hi})")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("range tracker is in clipping mode; recording is not allowed")]
    TrackerNotRecording,

    #[error("unknown block variant `{0}`")]
    UnknownVariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("non-finite loss {loss} at iteration {iter}; ladder ranges: {ranges}")]
    NonFiniteLoss { iter: u64, loss: f64, ranges: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel exceeds input: kernel {kernel} on input {input} with valid padding")]
    KernelExceedsInput { kernel: usize, input: usize },
    #[error("degenerate batch: training-mode batch normalization needs at least 2 examples, got {0}")]
    DegenerateBatch(usize),
    #[error("invalid target {0}: multi-label targets must be 0 or 1")]
    InvalidTarget(f64),
    #[error("no recorded graph: {0}")]
    NoRecordedGraph(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite value produced by {0}")]
    NonFiniteValue(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

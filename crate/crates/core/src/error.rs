use thiserror::Error;
use weakaudio_tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("clip too short: {samples} samples, need at least {needed}")]
    ClipTooShort { samples: usize, needed: usize },
    #[error("invalid band edges: {0}")]
    InvalidBandEdges(String),
    #[error("offset must be positive, got {0}")]
    NonPositiveOffset(f64),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("no output head: {0}")]
    NoOutputHead(String),
    #[error("no embedding layer: {0}")]
    NoEmbeddingLayer(String),
    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),
    #[error("no patches")]
    NoPatches,
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Process exit code: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArchitecture(_) | Error::NoOutputHead(_) | Error::InvalidBandEdges(_) => 2,
            Error::Numeric(_) | Error::UndefinedAuc(_) => 4,
            Error::Tensor(TensorError::NonFiniteGradient(_) | TensorError::NonFiniteValue(_)) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

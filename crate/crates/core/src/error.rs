use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),

    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("joint {joint} has no valid frame in the window")]
    AllMissing { joint: usize },

    #[error("degenerate scale: median torso length {0:e}")]
    DegenerateScale(f64),

    #[error("sequence too short: need {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("too few samples: need {needed}, got {got}")]
    TooFew { needed: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid range: {0}")]
    BadRange(String),

    #[error("invalid kind: {0}")]
    BadKind(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("all projected frames are behind the camera in view {view}")]
    BehindCamera { view: usize },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("music beat track is empty")]
    EmptyMusic,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

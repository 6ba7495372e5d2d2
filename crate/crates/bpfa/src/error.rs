use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm tensor cannot be normalized")]
    ZeroNorm,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("dataset file error: {0}")]
    DatasetFormat(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("accuracy floor unmet: {0}")]
    AccuracyFloor(String),

    #[error("threshold calibration failed: {0}")]
    Calibration(String),

    #[error("missing hook index {0} in gradient bank")]
    MissingHook(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

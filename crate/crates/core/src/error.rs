use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("validation error at row {row}, column `{column}`: {message}")]
    Validation { row: usize, column: String, message: String },

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("sample-size error: need at least {needed} samples, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Neural(#[from] symcast_neural::NeuralError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad configuration or invalid user input
    /// rather than by the data or the run itself.
    pub fn is_configuration(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Bounds(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

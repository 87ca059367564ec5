use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape error at {location}: {message}")]
    Shape { location: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tape state error: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("serialization error: {0}")]
    Serialize(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NeuralError {
    pub(crate) fn shape(location: impl Into<String>, message: impl Into<String>) -> Self {
        NeuralError::Shape {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NeuralError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("non-finite gradient for parameter {index} ({name})")]
    NonFiniteGradient { index: usize, name: String },
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
    #[error("gradient check harness failure: {0}")]
    Harness(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("unexpected tensor {0}")]
    Unexpected(String),
    #[error("tensor {name}: expected shape {expected:?}, got {got:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid clip spec: {0}")]
    Spec(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; diagnostics in {dump}")]
    NonFiniteLoss { epoch: usize, batch: usize, dump: String },
    #[error(transparent)]
    Tensor(#[from] adenet_tensor::TensorError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}

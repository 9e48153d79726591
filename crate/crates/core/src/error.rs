use entcap_tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("sequence of length {len} exceeds max_len {max}")]
    Length { len: usize, max: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("missing example ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by non-finite values rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Tensor(TensorError::NonFinite { .. }))
    }
}

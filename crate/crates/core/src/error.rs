use thiserror::Error;

pub type Result<T, E = PtaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PtaError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("loss diverged for task {task}, decoder {decoder}: {value}")]
    Divergence { task: usize, decoder: usize, value: f64 },

    #[error("{path}: line {line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PtaError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        PtaError::Validation(msg.into())
    }
}

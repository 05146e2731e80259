use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("serialization error: {0}")]
    Serialize(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("element with atomic number {0} is not in the model vocabulary")]
    UnknownElement(u8),

    #[error("unknown element symbol `{0}`")]
    UnknownSymbol(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    /// True for failures that stem from numerics rather than user input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence { .. })
    }
}

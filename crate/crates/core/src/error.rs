use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Validation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("architecture error: {0}")]
    Architecture(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("numeric error in {layer}: {msg}")]
    Numeric { layer: String, msg: String },
    #[error("range error in {layer}: {msg}")]
    Range { layer: String, msg: String },
    #[error("encoding error in tensor {tensor} at index {index}: {msg}")]
    Encoding {
        tensor: String,
        index: usize,
        msg: String,
    },
    #[error("grid config {index}: {source}")]
    GridConfig {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Numeric { .. } | Error::Range { .. } | Error::Io { .. } => false,
            Error::GridConfig { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

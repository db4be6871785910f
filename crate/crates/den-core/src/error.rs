use thiserror::Error;

pub type Result<T> = std::result::Result<T, DenError>;

#[derive(Debug, Error)]
pub enum DenError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl DenError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DenError::Io {
            path: path.into(),
            source,
        }
    }
}

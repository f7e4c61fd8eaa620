use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Core(#[from] raynn_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

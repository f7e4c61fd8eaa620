use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty index: at least one point is required")]
    EmptyIndex,
    #[error("invalid point at index {index}: coordinates must be finite")]
    InvalidPoint { index: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

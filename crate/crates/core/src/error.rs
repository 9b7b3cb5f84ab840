use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("refused: {0}")]
    Refused(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

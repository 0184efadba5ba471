use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter design: {0}")]
    InvalidDesign(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("missing data: {0}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    /// True for failures caused by malformed or unreadable input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::Io(_) | Error::Wav(_) | Error::Missing(_) | Error::TooShort(_)
        )
    }

    /// True for failures of the numerics (non-finite losses, undefined metrics).
    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::UndefinedMetric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

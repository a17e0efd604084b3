use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal length {0} is odd")]
    OddLength(usize),
    #[error("filter of length {filter} does not fit a signal of length {signal}")]
    FilterTooLong { filter: usize, signal: usize },
    #[error("length {length} is not divisible by 2^{levels}")]
    DepthTooLarge { length: usize, levels: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("window of length {0} is too short for instance statistics")]
    DegenerateWindow(usize),
    #[error("affine gain of channel {0} is too close to zero to invert")]
    ZeroGain(usize),
    #[error("parameters do not match the model configuration: {0}")]
    ConfigMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("split boundary {boundary} exceeds series length {length}")]
    SpecOutOfRange { boundary: usize, length: usize },
    #[error("series of length {length} cannot hold a window of {needed} steps")]
    SeriesTooShort { length: usize, needed: usize },
    #[error("{path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category used in CLI exit messages.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::DepthTooLarge { .. } => "depth",
            Error::OddLength(_) | Error::FilterTooLong { .. } | Error::ShapeMismatch(_) => "shape",
            Error::NonFinite(_) | Error::NonFiniteGradient(_) | Error::ZeroGain(_) => "numeric",
            Error::InvalidConfig(_) | Error::ConfigMismatch(_) | Error::Json(_) => "config",
            Error::DegenerateWindow(_)
            | Error::Parse { .. }
            | Error::EmptyFile(_)
            | Error::SpecOutOfRange { .. }
            | Error::SeriesTooShort { .. }
            | Error::Open { .. }
            | Error::Io(_)
            | Error::Csv(_) => "data",
        }
    }
}

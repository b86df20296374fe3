use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not compose.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Out-of-range input value, e.g. a class label outside `[0, classes)`.
    #[error("input error: {0}")]
    Input(String),
    /// An API was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    /// Malformed IDX, checkpoint or CSV bytes.
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class: 1 for usage errors, 2 for
    /// everything that stems from bad data, files or configs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            _ => 2,
        }
    }
}

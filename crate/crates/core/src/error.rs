use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is invalid. `key` names the offending setting.
    #[error("invalid value for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("particle index {index} outside domain [{lo}, {hi}]")]
    OutOfDomain { index: i64, lo: i64, hi: i64 },

    #[error("time {0} is not a grid point")]
    OffGrid(f64),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("incompatible inputs: {0}")]
    Mismatch(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

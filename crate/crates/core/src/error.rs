use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate variance estimate ({0:e})")]
    DegenerateVariance(f64),

    /// The offline test found a change inside a training window.
    #[error("training window contains a change point at position {cp_index}")]
    TrainingInvalid { cp_index: usize },

    #[error("monitoring window exhausted after {0} samples")]
    WindowExhausted(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ARMA estimation failed: {0}")]
    Estimation(String),

    #[error("cannot decode {line:?}: {reason}")]
    Decode { line: String, reason: String },

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Toml(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Toml(e.to_string())
    }
}

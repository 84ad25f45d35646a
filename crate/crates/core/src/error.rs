use thiserror::Error;

/// Errors raised anywhere in the hunting-game engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("propagation error: sound speed {sound} m/s does not exceed receiver speed {receiver} m/s")]
    Propagation { sound: f64, receiver: f64 },
    #[error("state error: {0}")]
    State(String),
    #[error("singularity: {0}")]
    Singular(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("riccati integration diverged at t = {time} (norm {norm:e})")]
    Divergence { time: f64, norm: f64 },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

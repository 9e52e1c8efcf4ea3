use std::fmt;

/// Errors surfaced by the library.
#[derive(Debug)]
pub enum EvaeError {
    /// Invalid configuration: bad shapes, bad hyperparameters, bad config keys.
    Config(String),
    /// An API was called in a way its contract forbids (e.g. backward before
    /// forward, greedy selection over an unevaluated population).
    Usage(String),
    /// A non-finite value appeared where the numerics must stay finite.
    Numeric(String),
    /// A checkpoint or cache file failed validation on load.
    Integrity(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvaeError>;

impl fmt::Display for EvaeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaeError::Config(msg) => write!(f, "configuration error: {msg}"),
            EvaeError::Usage(msg) => write!(f, "usage error: {msg}"),
            EvaeError::Numeric(msg) => write!(f, "numeric error: {msg}"),
            EvaeError::Integrity(msg) => write!(f, "integrity error: {msg}"),
            EvaeError::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for EvaeError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            EvaeError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for EvaeError {
    fn from(err: std::io::Error) -> Self {
        EvaeError::Io(err)
    }
}

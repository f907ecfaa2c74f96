use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("time {t} is outside [{start}, {end}]")]
    OutOfBounds { t: f64, start: f64, end: f64 },

    /// A file parsed but a field holds an invalid value.
    #[error("schema error in {field}: {message}")]
    Schema { field: String, message: String },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("backend error ({role}): {message}")]
    Backend { role: String, message: String },

    #[error("io error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable tag used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::Schema { .. } => "schema",
            Error::Parse { .. } => "parse",
            Error::Backend { .. } => "backend",
            Error::Io { .. } => "io",
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Schema { field, .. } => Some(field),
            Error::Parse { location, .. } => Some(location),
            _ => None,
        }
    }
}

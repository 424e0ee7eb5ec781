use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read image {id} ({path}): {message}")]
    ImageRead {
        id: String,
        path: PathBuf,
        message: String,
    },

    #[error("label of sample `{0}` is withheld from training")]
    LabelWithheld(String),

    #[error(
        "non-finite loss at epoch {epoch} step {step} (lambda={lambda}, lr={lr}, batch={batch_ids:?})"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        lambda: f64,
        lr: f64,
        batch_ids: Vec<String>,
    },

    #[error("malformed checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$kind(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;

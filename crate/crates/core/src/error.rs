use std::path::PathBuf;

use thiserror::Error;

use crate::backends::protocol::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A container's declared dimensions disagree with its payload.
    #[error("structural error: {0}")]
    Structural(String),

    /// Input data is well-formed but semantically unusable (non-finite scores, bad labels).
    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("backend `{backend}` failed ({context}): {source}")]
    Backend {
        backend: String,
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps `self` with the name of the backend and the place in the pipeline it failed.
    pub fn in_backend(self, backend: &str, context: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.to_string(),
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error once all backend context layers are peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Backend { source, .. } => source.root(),
            other => other,
        }
    }
}

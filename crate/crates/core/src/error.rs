use std::path::PathBuf;

use thiserror::Error;

use crate::denoiser::TrainTrace;

pub type Result<T, E = IpsdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IpsdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was invoked on an object that is not in the required state.
    #[error("invalid state: {0}")]
    State(String),

    #[error("denoiser training diverged at step {} (non-finite loss)", trace.steps())]
    TrainingDiverged { trace: Box<TrainTrace> },

    #[error("policy update diverged: {0}")]
    UpdateDiverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// Wraps an error with the id of the signal being processed.
    #[error("signal {id}: {source}")]
    Signal {
        id: String,
        #[source]
        source: Box<IpsdError>,
    },
}

impl IpsdError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        IpsdError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IpsdError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        IpsdError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn for_signal(self, id: impl Into<String>) -> Self {
        IpsdError::Signal {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping signal-id context wrappers.
    pub fn root(&self) -> &IpsdError {
        match self {
            IpsdError::Signal { source, .. } => source.root(),
            other => other,
        }
    }
}

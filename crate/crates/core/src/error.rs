use std::path::PathBuf;

use thiserror::Error;

use crate::sde::Direction;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite state at step {step}, sample {sample} during {direction} simulation")]
    NonFiniteState {
        direction: Direction,
        step: usize,
        sample: usize,
    },

    #[error("expected a {expected} batch, got a {actual} batch")]
    DirectionMismatch {
        expected: Direction,
        actual: Direction,
    },

    #[error("non-finite loss at stage {stage}, {half} half, step {step}: {components}")]
    NonFiniteLoss {
        stage: usize,
        half: Direction,
        step: usize,
        components: String,
    },

    #[error("replay buffer for {0} batches is empty")]
    EmptyBuffer(Direction),

    #[error("operation needs the gmm scenario, got `{0}`")]
    WrongScenario(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed trajectory csv, line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at step {step}")]
    Diverged { what: String, step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("metrics line {line}: {message}")]
    Metrics { line: usize, message: String },

    #[error("{phase} (seed {seed}): {source}")]
    Phase {
        phase: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_phase(self, phase: impl Into<String>, seed: u64) -> Self {
        Error::Phase {
            phase: phase.into(),
            seed,
            source: Box::new(self),
        }
    }
}

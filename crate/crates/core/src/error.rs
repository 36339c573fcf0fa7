use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("non-finite {term} loss in batch {batch}")]
    NonFinite { term: String, batch: usize },

    #[error("training failed at epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_epoch(self, epoch: usize) -> Self {
        match self {
            e @ Error::Training { .. } => e,
            e => Error::Training {
                epoch,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = configuration, 3 = training, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => 4,
            Error::Dimension { .. }
            | Error::Parameter { .. }
            | Error::NonFinite { .. }
            | Error::Training { .. } => 3,
        }
    }
}

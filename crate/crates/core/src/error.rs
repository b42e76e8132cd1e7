use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
///
/// Variants fall into three families that the CLI maps onto exit codes:
/// configuration/usage problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("input too short: got {got} samples, need at least {min}")]
    InputTooShort { got: usize, min: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("upsampling unsupported: sample rate {0} Hz is below the 8000 Hz target")]
    UpsamplingUnsupported(u32),

    #[error("transcript is empty")]
    EmptyTranscript,

    #[error("no frames to choose from")]
    NoFrames,

    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("missing modality input: {0}")]
    MissingModality(String),

    #[error("non-finite loss at epoch {epoch}, batch clips {clip_ids:?}")]
    NonFiniteLoss { epoch: usize, clip_ids: Vec<String> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}")]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad numbers rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}

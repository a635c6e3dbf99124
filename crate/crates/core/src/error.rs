use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or configuration value is out of its valid domain.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Two operands disagree in shape.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Power-ratio scaling was impossible (silent component).
    #[error("scaling failed: {0}")]
    Scaling(String),

    /// The Schroeder decay curve does not cover the fitting range.
    #[error("insufficient decay range: {0}")]
    DecayRange(String),

    /// A signal or dataset file is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A configuration file failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Corpus directories or files that do not exist.
    #[error("missing paths: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingPaths(Vec<PathBuf>),

    /// Training produced a non-finite loss.
    #[error("training diverged at stage {stage}, epoch {epoch}")]
    Diverged { stage: u8, epoch: usize },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn bad_param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Param(msg.into()))
}

pub(crate) fn bad_shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

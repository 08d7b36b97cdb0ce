use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed an argument outside the operation's domain.
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// An internal invariant was broken; should be unreachable for valid inputs.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

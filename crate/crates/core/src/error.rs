use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A query point fell outside the domain it must lie in.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// A transport-plan row carries no mass, so its displacement is undefined.
    #[error("degenerate plan row {0}: zero row mass")]
    DegenerateRow(usize),

    /// A linear system could not be solved to the required residual.
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    /// Too few or degenerate points for a geometric construction.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Correlation is undefined for the given samples.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file did not match its declared format.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}

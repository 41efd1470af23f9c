use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate evidence: {0}")]
    DegenerateEvidence(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("infeasible: {0}")]
    Feasibility(String),
    #[error("ill-conditioned kernel: factorization failed at jitter {0:e}")]
    IllConditioned(f64),
    #[error("symmetry violation: {0}")]
    SymmetryViolation(String),
    #[error("degenerate block: {0}")]
    DegenerateBlock(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

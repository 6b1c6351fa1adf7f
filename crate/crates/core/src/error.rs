use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("target false-alarm probability {0} is outside (0, 1)")]
    InvalidPfa(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that should be positive definite was not, or a detector has no signal path.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
}

impl Error {
    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config { line, msg: msg.into() }
    }
}

pub(crate) fn check_pfa(pfa: f64) -> Result<()> {
    if pfa > 0.0 && pfa < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidPfa(pfa))
    }
}

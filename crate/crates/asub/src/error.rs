use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("hyperparameter fit failed: {0}")]
    Fit(String),
    #[error("degenerate candidate: predictive variance {0:e} below threshold")]
    DegenerateCandidate(f64),
    #[error("design saturated: every acquisition candidate is degenerate")]
    DesignSaturated,
    #[error("uncertainty quantification failed: {0}")]
    Uq(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

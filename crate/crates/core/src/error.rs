use std::io;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("diverged at iteration {iteration}: non-finite value in {what}")]
    Divergence { iteration: usize, what: &'static str },

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

use thiserror::Error;

use crate::dynamics::SolverState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A state entry became non-finite during integration.
    #[error("non-finite state at t = {t}: {what}")]
    NonFinite { t: f64, what: String },

    /// The state norm exceeded the divergence threshold. Carries the last
    /// finite state so callers can inspect where the run went wrong.
    #[error("trajectory diverged at t = {t} (state norm {norm:e})")]
    Divergence {
        t: f64,
        norm: f64,
        last_state: Box<SolverState>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

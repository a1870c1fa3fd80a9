use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The signal is never sent to this type, so no posterior exists.
    #[error("signal has zero probability under the prior")]
    ZeroMassSignal,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("signal grid has {columns} columns, cap is {cap}")]
    GridTooLarge { columns: u128, cap: u128 },

    #[error("no path from source to sink")]
    NoPath,

    #[error("type pairing mismatch: {0}")]
    PairingMismatch(String),

    #[error("LP backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("duplicate LP variable `{0}`")]
    DuplicateVariable(String),

    #[error("unknown LP {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}

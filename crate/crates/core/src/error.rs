use thiserror::Error;

/// Errors raised across the simulation, oracle and estimation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A law or mechanism description violates one of its invariants.
    #[error("invalid-spec: {0}")]
    InvalidSpec(String),

    #[error("incompatible-mechanism: {0}")]
    IncompatibleMechanism(String),

    #[error("zero-survival: {0}")]
    ZeroSurvival(String),

    #[error("too-large: {0}")]
    TooLarge(String),

    #[error("step-cap exhausted: {censored} of {paths} paths hit the cap of {cap} steps")]
    StepCapExhausted { censored: u64, paths: u64, cap: u64 },

    #[error("too-few-survivors: {survivors} survivors, need at least {required}")]
    TooFewSurvivors { survivors: u64, required: u64 },

    #[error("u undefined at height {height}")]
    UndefinedU { height: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable short identifier, used in `summary.json`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid-spec",
            Error::IncompatibleMechanism(_) => "incompatible-mechanism",
            Error::ZeroSurvival(_) => "zero-survival",
            Error::TooLarge(_) => "too-large",
            Error::StepCapExhausted { .. } => "step-cap-exhausted",
            Error::TooFewSurvivors { .. } => "too-few-survivors",
            Error::UndefinedU { .. } => "undefined-u",
            Error::EmptySample => "empty-sample",
            Error::InvalidArgument(_) => "invalid-argument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

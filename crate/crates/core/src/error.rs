use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested exact computation exceeds the configured state budget.
    #[error("capability exceeded: {what} needs {needed}, budget is {budget}; use Monte Carlo mode")]
    Capability { what: &'static str, needed: usize, budget: usize },

    #[error("time {t} lies outside the sampled horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },

    #[error("chi distance undefined: reference has zero mass at state {0} where the other law is positive")]
    UndefinedChi(usize),

    #[error("profile vanishes at r = {0}; the mixing integral diverges")]
    DivergentIntegral(f64),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("theorem hypothesis fails: {0}")]
    TheoremInapplicable(String),

    #[error("all {0} replicas were censored at the horizon")]
    AllCensored(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

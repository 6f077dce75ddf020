use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// An interior-point solve did not reach the requested accuracy. Never
    /// interpreted as infeasibility.
    #[error("numerical failure in {context}: {detail}")]
    NumericalFailure { context: String, detail: String },

    /// No phase selection admits a design meeting every SINR target.
    #[error("problem infeasible for every phase selection (gamma = {gamma:?})")]
    Infeasible { gamma: Vec<f64> },

    #[error("enumeration refused: {needed} selections exceed budget {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },

    /// A Benders cut turned out to be invalid (usually inaccurate duals).
    #[error("cut validity violated: {0}")]
    CutValidity(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericalFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

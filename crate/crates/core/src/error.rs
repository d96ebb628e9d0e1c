use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of a primitive.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data failed validation; `path` points at the offending field.
    #[error("invalid {path}: {message}")]
    Validation { path: String, message: String },

    /// Structural problem with the Markov model (e.g. reducibility).
    #[error("model error: {0}")]
    Model(String),

    #[error(
        "portfolio return {value} is not positive at state {state}, next state {next}, atom {atom}"
    )]
    InfeasibleReturn {
        state: usize,
        next: usize,
        atom: usize,
        value: f64,
    },

    #[error("non-finite weighted transition entry at ({from}, {to})")]
    NumericalOverflow { from: usize, to: usize },

    #[error("power iteration did not converge after {iterations} steps (last relative change {last_change:e})")]
    SpectralFailure { iterations: usize, last_change: f64 },

    /// The operator is not well defined at the listed states: the certainty
    /// equivalent plus the gain-loss term is negative there.
    #[error("operator undefined at states {states:?}")]
    UndefinedOperator { states: Vec<usize> },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    IterationLimit {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
        previous: Vec<f64>,
        residual_tail: Vec<f64>,
    },
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

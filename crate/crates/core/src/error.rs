use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected} states, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Two independent solves of the same kernel landed on different
    /// stationary vectors, so the chain has more than one closed class.
    #[error("stationary distribution is not unique: {0}")]
    NonUnique(String),

    #[error("no convergence after {iterations} iterations (last L1 step {last_step:e})")]
    NoConvergence { iterations: u64, last_step: f64 },

    #[error("support graph has {count} closed classes, expected exactly one")]
    MultipleClosedClasses { count: usize },

    #[error("recurrent class is periodic with period {period}")]
    Periodic { period: usize },

    #[error("profit formulas disagree: {name} = {value:e} vs {reference_name} = {reference:e}")]
    FormulaDisagreement {
        name: &'static str,
        value: f64,
        reference_name: &'static str,
        reference: f64,
    },

    #[error("linear solve failed: {0}")]
    Solver(String),
}

impl Error {
    /// Short machine-readable tag used in JSON error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonUnique(_) => "non_unique",
            Error::NoConvergence { .. } => "no_convergence",
            Error::MultipleClosedClasses { .. } => "multiple_closed_classes",
            Error::Periodic { .. } => "periodic",
            Error::FormulaDisagreement { .. } => "formula_disagreement",
            Error::Solver(_) => "solver",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("variable index {index} out of range for {nvars} variables")]
    VariableOutOfRange { index: usize, nvars: usize },

    #[error("degenerate interval [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },

    #[error("moment rank {rank} exceeds moment vector length {len}")]
    RankOverflow { rank: usize, len: usize },

    #[error("relaxation order {order} too small: need at least {required}")]
    OrderTooSmall { order: usize, required: usize },

    #[error("fixed prefix makes constraint {index} constant negative ({value})")]
    InfeasiblePrefix { index: usize, value: f64 },

    #[error("solver did not reach optimality: {0}")]
    Solver(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("no feasible parameter subinterval found for coordinate {coord}")]
    DichotomyExhausted { coord: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

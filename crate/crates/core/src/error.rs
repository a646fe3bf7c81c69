use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite state at t = {time}: {detail}")]
    NonFinite { time: f64, detail: String },

    #[error("enumeration of {required} supports exceeds budget {budget}; use bounds")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("constraint infeasible: least-squares residual {min_residual} exceeds noise radius {eps}")]
    Infeasible { min_residual: f64, eps: f64 },

    #[error("certificate infeasible: {}", .0.join(", "))]
    Uncertified(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {}, column {}: {}", e.line(), e.column(), e))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

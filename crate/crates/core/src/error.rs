//! Error type shared by the core modules.

use alloc::string::String;
use core::fmt;

/// Failure modes of model construction, simulation, and estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Input data violated a structural rule; the message names the rule.
    Validation(String),
    /// A dense factorization or solve failed (singular or non-SPD matrix).
    Numerical(String),
    /// An iterative solve exhausted its iteration budget.
    NonConvergence(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Validation(msg) => write!(f, "validation error: {msg}"),
            CoreError::Numerical(msg) => write!(f, "numerical error: {msg}"),
            CoreError::NonConvergence(msg) => write!(f, "did not converge: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, solvers, and evaluators.
#[derive(Debug, Error)]
pub enum Error {
    /// A model failed validation (dimensions, stochasticity, definiteness).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Inputs to an operation have inconsistent dimensions or lengths.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The observed path has zero probability under the model.
    #[error("impossible observation path at step {step} (symbol {symbol})")]
    ImpossiblePath { step: usize, symbol: usize },

    /// A fixed-point iteration did not reach its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Exact tree operations refuse instances past the enumeration guard.
    #[error("observation tree too large: {leaves} leaves exceeds guard {guard}")]
    TreeTooLarge { leaves: u128, guard: u128 },

    /// A numeric routine failed (factorization, singular system).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A structured text config could not be parsed.
    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Void bounds and non-convergent suprema are errors rather than infinite
/// values: a bound built from an infinite constant carries no information and
/// the caller has to see that explicitly.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    #[error("supremum did not converge: {0}")]
    NoConvergence(String),

    #[error("convention undefined: {0}")]
    ConventionUndefined(String),

    #[error("invalid parameter order: requires d <= D, got d = {d}, D = {big_d}")]
    InvalidOrder { d: String, big_d: String },

    #[error("m_frak = {0} exceeds 1; the ball-mass lower bound is inconsistent with the inputs")]
    MFrakOverflow(f64),

    #[error("void bound: {0}")]
    VoidBound(String),

    #[error("bracket search failed: {0}")]
    BracketFailure(String),

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("failed to read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Turns a non-convergent supremum into a void-bound error; other errors
    /// pass through unchanged.
    pub fn void_if_infinite(self) -> Error {
        match self {
            Error::NoConvergence(msg) => Error::VoidBound(format!("infinite constant: {msg}")),
            other => other,
        }
    }
}

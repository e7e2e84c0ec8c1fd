//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while loading data or fitting models.
///
/// Numerical failures are reported as errors rather than panics; iteration
/// caps are *not* errors (results carry a `converged` flag instead).
#[derive(Error, Debug)]
pub enum EtasError {
    /// Malformed catalog input (CSV or datetime parsing).
    #[error("catalog parse error at line {line}: {reason}")]
    CatalogParse { line: usize, reason: String },

    /// A structural requirement on inputs was violated.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Parameter vector outside its domain (negative rates, p <= 0, ...).
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A change-point period contains no events, so its model cannot be fit.
    #[error("period [{start}, {end}] contains no events")]
    EmptyPeriod { start: f64, end: f64 },

    /// A likelihood or intensity evaluated to NaN/inf where a finite value
    /// was required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A matrix factorization (Cholesky of a Hessian or penalty block)
    /// failed; the matrix is singular or indefinite.
    #[error("matrix factorization failed in {context}")]
    Factorization { context: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl EtasError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EtasError::Invalid(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        EtasError::NonFinite {
            context: context.into(),
        }
    }
}

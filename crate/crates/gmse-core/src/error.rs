//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by register construction, model fitting and accuracy
/// estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid register: {0}")]
    Register(String),

    #[error("row {row}: unknown level '{level}' in column '{column}'")]
    UnknownLevel {
        row: usize,
        column: String,
        level: String,
    },

    #[error("row {row}, column '{column}': {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty register")]
    EmptyRegister,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite linear predictor for unit {unit}, category {category}")]
    NonFinitePredictor { unit: usize, category: usize },

    #[error("categories {categories:?} absent from the sample; the model is not identifiable")]
    CategoriesAbsent { categories: Vec<usize> },

    #[error("Newton did not converge after {iterations} iterations (score norm {score_norm:.3e}, tolerance {tolerance:.3e})")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        tolerance: f64,
    },

    #[error("model did not converge; rebuild with allow_nonconverged to override")]
    NonConvergedModel,

    #[error("information matrix is not positive definite (ridge retry and pseudo-inverse both failed)")]
    NotPositiveDefinite,

    #[error("GMSE for category {category} is negative beyond cancellation tolerance ({value:.6e})")]
    NegativeGmse { category: usize, value: f64 },

    #[error("CV undefined on empty/null total")]
    CvUndefined,

    #[error("unknown domain column '{0}'")]
    UnknownDomainColumn(String),

    #[error("{dropped} of {requested} replicates dropped (limit 5%)")]
    TooManyDropped { dropped: usize, requested: usize },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("MC requires simulation truth")]
    TruthRequired,
}

pub type Result<T> = std::result::Result<T, Error>;

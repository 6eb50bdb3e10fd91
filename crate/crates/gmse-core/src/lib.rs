//! Register totals for multi-category outcomes via multinomial-logistic mass
//! imputation, with a linearised generalised mean squared error (GMSE) and
//! coefficient of variation attached to every total.
//!
//! The crate is organised around the production pipeline:
//!
//! 1. [`register`] / [`schema`] / [`design`]: the unit-level register, its
//!    covariate coding and the dummy design matrix;
//! 2. [`model`]: the multinomial logistic model (fit, probabilities, score,
//!    Hessian) and register-wide prediction of totals;
//! 3. [`linear`]: the linearised GMSE with a domain-free plug-in cache, CV
//!    and the multinomial-draw variant;
//! 4. [`kronecker`]: an independent Kronecker-form reimplementation used to
//!    cross-validate the linearised estimator;
//! 5. [`resampling`]: bootstrap and Monte-Carlo companions;
//! 6. [`sim`]: synthetic-register generation and the estimator comparison
//!    study;
//! 7. [`report`]: CSV emission.

pub mod design;
pub mod error;
pub mod kronecker;
pub mod linalg;
pub mod linear;
pub mod model;
pub mod parallel;
pub mod register;
pub mod report;
pub mod resampling;
pub mod rng;
pub mod schema;
pub mod selfcheck;
pub mod sim;

pub use design::{build_design_matrix, build_design_matrix_from_columns, DesignMatrix};
pub use error::{Error, Result};
pub use linear::{cumulated_gmse, cv, f_matrix_row, CacheOptions, PluginCache};
pub use model::{
    fit, fit_from, fit_with_categories, hessian, log_likelihood, predict_totals, probabilities,
    score, Coefficients, FitOptions, FittedModel, ProbabilityMatrix,
};
pub use parallel::Reduction;
pub use register::{population_total, DomainKind, DomainSpec, Register};
pub use resampling::{
    bootstrap_gmse, mc_oracle, BootstrapCentre, BootstrapResult, McResult, ResamplingPlan,
};
pub use schema::{Covariate, CovariateKind, CovariateSchema, Role};
pub use sim::{
    generate_register, run_comparison, Estimator, SimulationScenario, SimulationTruth,
    StudyReport, StudySelection,
};

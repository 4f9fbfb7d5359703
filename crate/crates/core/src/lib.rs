//! Structural equation models with latent variables and composites.
//!
//! Latent variables are common factors of their indicators; composites are
//! weighted sums of theirs. Both enter one structural model and one
//! model-implied covariance matrix, estimated by maximum likelihood (or GLS)
//! from a sample covariance matrix.
//!
//! The pipeline is: [`parse_model`] → [`build_parameter_table`] →
//! [`check_identification`] → [`start_values`] → [`fit`] →
//! [`fit_statistics`] / [`standardize`].

pub mod assess;
pub mod data;
mod error;
pub mod estimate;
pub mod identify;
pub mod linalg;
pub mod matrices;
pub mod ptable;
pub mod scenario;
pub mod syntax;

pub use assess::{fit_statistics, fit_statistics_with, standardize, FitStatistics, SrmrVariant};
pub use data::{exact_population_sample, read_covariance_csv, read_csv, sample_moments, CsvOptions, Dataset};
pub use error::{Error, Result};
pub use estimate::{
    fit, ChisqMultiplier, Divisor, Estimator, FitOptions, FitResult, FitWarning, MultiStart,
    OptimizerOptions, SampleMoments,
};
pub use identify::{check_identification, count_df, CheckStatus, IdentificationReport};
pub use matrices::{implied_covariance, Implied, ModelMatrices, ModelStructure};
pub use ptable::{
    build_parameter_table, start_values, Construct, ConstructKind, ParamRow, ParameterTable, Role,
    ScalingOptions, Status,
};
pub use syntax::{parse_model, ModelSpec, Operator, Statement, Term};

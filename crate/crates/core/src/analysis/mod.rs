//! Beta regression, the order- and party-bias models built on it, and the
//! correlation checks used to validate reconstructors.

pub mod likelihood;
pub mod models;
pub mod optim;
pub mod regression;
pub mod special;
pub mod synthetic;
pub mod validation;

use thiserror::Error;

use crate::metrics::MetricsError;

pub use likelihood::BetaLikelihood;
pub use models::{
    fit_beta_regression, marginal_means, order_bias_model, order_curve, party_bias_model,
    MarginalMean, ObservationRow, RegressionSpec, ScoreRecord,
};
pub use regression::{
    fit_design, smooth_proportions, stars, Coefficient, Design, FitOptions, ModelKind,
    RegressionFit, CONVERGENCE_TOL, LOGLIK_RESOLUTION,
};
pub use validation::{pearson, reconstructor_precision_check};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("model {model} lacks methods: {}", methods.join(", "))]
    MissingMethods { model: String, methods: Vec<String> },
    #[error("refused: {0}")]
    Refused(String),
    #[error("correlation is undefined for constant input")]
    UndefinedCorrelation,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

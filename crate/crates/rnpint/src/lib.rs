//! Robust nonparametric integrative sparse boosting for multiple related
//! datasets.
//!
//! The library fits additive spline models jointly across datasets,
//! detecting which covariate effects are shared and which differ, selecting
//! variables, and predicting continuous or right-censored (AFT) outcomes.
//! Contaminated responses are handled through a Cauchy loss with bounded
//! influence. Six method variants run on one boosting engine:
//!
//! | name      | loss          | effects | integration  |
//! |-----------|---------------|---------|--------------|
//! | RNP-Int   | Cauchy        | spline  | joint        |
//! | NRNP-Int  | least squares | spline  | joint        |
//! | RP-Int    | Cauchy        | linear  | joint        |
//! | NRP-Int   | least squares | linear  | joint        |
//! | RNP-Meta  | Cauchy        | spline  | per dataset  |
//! | RNP-Pool  | Cauchy        | spline  | pooled rows  |
//!
//! See the `examples/` directory for runnable walkthroughs of each
//! capability, and the `rnpint` binary for the file-based pipeline
//! (`simulate`, `fit`, `tune`, `evaluate`, `bench`).

pub mod basis;
pub mod bench;
pub mod boost;
pub mod data;
pub mod error;
pub mod loss;
pub mod methods;
pub mod metrics;
pub mod sim;
pub mod solver;
pub mod state;
pub mod tune;

pub use basis::{BasisConfig, BasisExpansion};
pub use boost::{fit, predict, Booster, FitConfig, FitOutput, FitResult, Problem};
pub use data::{load_csv, screen_covariates, Dataset, Metadata, Outcome, StandardizeMode};
pub use error::{Error, Result};
pub use loss::{LossKind, LossSpec};
pub use methods::{fit_method, CombinedFit, Method};
pub use metrics::EvalReport;
pub use sim::{ScenarioSpec, TruthTable};
pub use state::CoefficientState;
pub use tune::{tune_lambda, TuneSpec};

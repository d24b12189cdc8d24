//! Dynamic generalized linear models: variational-Bayes / linear-Bayes
//! filtering, latent factor coupling across series, copula-based path
//! forecasting, count mixtures and forecast evaluation.
//!
//! Shared types are re-exported at the crate root; the modules hold the
//! operations.

// `!(x > 0.0)` is deliberate throughout: NaN has to fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod copula;
pub mod dcmm;
pub mod dglm;
pub mod error;
pub mod exp_family;
pub mod external;
pub mod latent_factor;
pub mod linalg;
pub mod metrics;
pub mod paths;
pub mod predictive;
pub mod sampling;
pub mod special;
pub mod vb_table;

pub use copula::{CopulaModel, CopulaSpec, MarginSpec, PathMoments};
pub use dcmm::{DcmmSpec, DcmmState};
pub use dglm::{DglmSpec, DiscountBlock, FilterStep, ModelBuilder, ObsSlot, Regressor, StatePath};
pub use error::{Error, Result};
pub use exp_family::{ConjugateParams, Family, FamilySpec, Link, LinearPredictorMoments, Observation};
pub use external::{AggregateDlm, FactorCoord, VarianceLearning};
pub use latent_factor::{FactorMoments, JointPredictorMoments, LatentFactorBelief};
pub use linalg::GaussianMoments;
pub use metrics::MetricSeries;
pub use paths::ForecastPaths;
pub use predictive::PredictiveDist;
pub use vb_table::VbTable;

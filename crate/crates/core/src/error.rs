use thiserror::Error;

use crate::exp_family::{ConjugateParams, Family};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("parameters {params:?} do not belong to family {family:?}")]
    FamilyMismatch {
        family: Family,
        params: ConjugateParams,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("observation {value} outside the support of {family:?}")]
    Support { family: Family, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("variational solve did not converge after {iterations} iterations (last iterate {last:?})")]
    NoConvergence {
        iterations: usize,
        last: ConjugateParams,
    },

    #[error("table build failed at f={f}, q={q}: {source}")]
    TableBuild {
        f: f64,
        q: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("covariance matrix could not be factorized after repair")]
    Cholesky,

    #[error("quantile evaluation failed for coordinate {coordinate}: {reason}")]
    Quantile { coordinate: usize, reason: String },

    #[error("malformed table file: {0}")]
    TableFormat(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

//! Run configuration, data ingest, synthetic scenarios and the
//! filter/forecast/evaluate pipeline behind the `dglm` binary.

// NaN has to fail the `!(x > 0.0)` config checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench_model;
pub mod config;
pub mod data;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod synth;

pub use config::RunConfig;
pub use data::ObservationTable;
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, run_pipeline_with_threads, RunResult, Stage};

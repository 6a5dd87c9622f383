//! Event loop, policies, reports and multi-policy comparison.

mod compare;
mod config;
mod report;
mod run;

pub use compare::{compare, compare_configs, worker_limit, Comparison, ComparisonRow, JOBS_ENV};
pub use config::{FreezeParams, LazyParams, Policy, RunConfig, RUN_DEFAULT_CAP};
pub use report::{
    FreezeChange, RequestRecord, RoundInfo, RunReport, ThresholdCause, ThresholdPoint,
};
pub use run::{run, run_on};

//! Capacity planning, benchmarking, orchestration, and report aggregation.

mod bench;
mod launch;
mod memory;
mod report;

use thiserror::Error;

pub use bench::{bench_throughput, BenchReport, BenchTopology};
pub use launch::{launch, LaunchOutcome, RunSpec};
pub use memory::{
    buffer_bytes, max_envs, reference_table, render_table, CapacityReport, Layout, MemoryModel,
    TableRow,
};
pub use report::{report_table2, Table2};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("arithmetic overflow in {what}")]
    Overflow { what: &'static str },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("launch error: {0}")]
    Launch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Learner(#[from] crate::learner::LearnerError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

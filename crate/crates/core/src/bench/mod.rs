//! Persistence, experiment configuration, sweeps, reports and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod store;

pub use config::{EvalConfig, ExperimentConfig, Seeds};
pub use pipeline::{prepare, run_ablation, run_variant, Ablation, Prepared, RunRecord, Variant};
pub use report::{MetricsFile, Row};

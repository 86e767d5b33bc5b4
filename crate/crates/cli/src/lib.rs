//! Batch experiment runner for `paris-smc`.
//!
//! A run simulates one data record from the configured model, drives every
//! replicate of the chosen estimator over it and writes:
//!
//! * `states.csv`, `observations.csv`: the shared data record;
//! * one per-step CSV per replicate (`rml_r000.csv`, `tangent_r000.csv`, …);
//! * `summary.json`: final values, replicate means and variances, step
//!   timing medians and a provenance block;
//! * `config.json`: the configuration as run;
//! * `plotdata.csv` via [`emit_plotdata`]: long-format `replicate,t,series,value`.
//!
//! All numbers in CSV files use the shortest representation that parses
//! back to the same `f64`, and no timing or host information is written to
//! them, so identical configurations give byte-identical CSVs.

pub mod compare;
pub mod config;
pub mod error;
pub mod oracle_check;
pub mod run;

pub use compare::{compare, CompareReport};
pub use config::{preset, BuiltModel, Estimator, ExperimentConfig, ModelConfig, StartConfig, OUT_DIR_ENV};
pub use error::CliError;
pub use oracle_check::{oracle_check, CheckResult};
pub use run::{emit_plotdata, run, Command, ReplicateStatus, RunArtifact, Summary};

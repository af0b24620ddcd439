//! Configuration parsing and experiment drivers behind the `rnls` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig, LoadedConfig};
pub use run::{config_hash, run, Experiment, RunOutcome};

//! Configuration-driven front end for `slabrt-core`: reads a TOML experiment
//! description, runs convergence studies and writes CSV tables, iteration
//! traces and a JSON summary.

pub mod cli;
pub mod config;
pub mod output;
pub mod run;
pub mod verify;

pub use config::{ConfigError, Experiment, ExperimentConfig};

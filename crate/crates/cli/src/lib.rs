//! Pipeline driver: simulate a history, score recommenders over time with and
//! without item reweighting, optimize the weights and merge everything into a
//! JSON report.

pub mod commands;
pub mod config;

pub use config::{ConfigError, ExperimentConfig, PValue};

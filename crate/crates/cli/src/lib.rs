//! Orchestration behind the `mixsel` binary: run configuration, subcommands,
//! the Monte Carlo runner and report tables.
//!
//! Every command is a pure function of its configuration (seed included) and
//! input files. Outputs land in `output_dir` next to the effective
//! configuration and a manifest of SHA-256 hashes.

pub mod commands;
pub mod config;
pub mod error;
pub mod estimation;
pub mod manifest;
pub mod montecarlo;
pub mod tables;

pub use config::{Column, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::Manifest;
pub use montecarlo::McSummary;

//! Command-line front end for `mfgp-core`.
//!
//! A run is described by a TOML file (see [`config`]). Commands write their
//! artifacts (CSV tables, a JSON model file and a JSON run report) into the
//! configured output directory. CSV files are byte-identical across runs with
//! the same configuration; wall times and timestamps appear only in
//! `report.json`.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for numerical failures.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod model_file;

pub use commands::run;
pub use config::{parse_config, RunConfig};
pub use error::CliError;

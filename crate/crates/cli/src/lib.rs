//! Batch front end: return-series ingestion, TOML run manifests and the
//! `simulate`, `fit`, `backtest`, `mcs` and `weights-plot` commands.
//!
//! Returns are read as percent log returns from `date,return` CSV files.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod format;

pub use commands::run;
pub use config::{Command, RunConfig};
pub use error::{CliError, CliResult};

//! Command-line front end: run a broker, launch node graphs from JSON
//! configs, inspect topics and parameters, record and replay.

pub mod commands;
pub mod expression_script;
pub mod launch;

pub use commands::{run, Cli, CliError};

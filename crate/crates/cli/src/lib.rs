//! Run configuration and subcommands behind the `autosem` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfigFile;
pub use error::CliError;

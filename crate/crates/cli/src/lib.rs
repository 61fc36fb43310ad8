//! Command-line front end: TOML run configurations, the commands behind the
//! `tecoord` binary and the studies they share with the acceptance tests.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod studies;

pub use commands::{run, RunArgs, Status};
pub use error::CliError;

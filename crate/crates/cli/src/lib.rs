//! Command-line front end: server configuration, scripted clients, model
//! checking and the experiment harness.

use std::path::PathBuf;

pub mod bench;
pub mod check;
pub mod config;
pub mod scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("cannot parse {0}: {1}")]
    Parse(String, String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("script: {0}")]
    Script(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("experiment: {0}")]
    Bench(String),
}

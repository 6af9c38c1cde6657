//! Library side of the `samcnet` command-line tool. Every subcommand is a
//! plain function so it can be driven from tests; `main.rs` only parses flags.

pub mod commands;
pub mod config;

pub use commands::*;
pub use config::{DataConfig, OutputConfig, RunConfig};

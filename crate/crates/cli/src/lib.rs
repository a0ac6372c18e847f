//! Operator surface for the drum-transcription toolkit: file formats,
//! configuration, and the subcommand implementations behind the
//! `tatumscribe` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;

pub use error::{CliError, CliResult};

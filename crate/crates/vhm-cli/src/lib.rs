//! Operator surface for the VHM summarization model: config files and flag
//! merging, corpus and checkpoint file formats, run directories, the
//! experiment grid driver, and the five CLI commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod grid;
pub mod report;
pub mod runs;

pub use error::{CliError, ErrorCategory};

//! Configuration and persistence for the command-line driver.

pub mod config;
pub mod output;

pub use config::{parse_fraction, Command, ExperimentConfig};
pub use output::{format_number, read_csv, Cell, FileEntry, OutputSink, RunManifest, Table};

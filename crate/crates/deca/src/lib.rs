//! File formats, training loop, evaluation and the `deca` command line.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod export;
pub mod train;
pub mod transfer;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use deca_core as core;
pub use error::{CliError, Result};

//! Command-line driver for transformer-based Q-network experiments: run configuration,
//! presets, training, checkpoint evaluation, hyperparameter studies and size variants.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod presets;
pub mod search;
pub mod train;
pub mod variants;

pub use config::{resolve, Overrides, RunConfig};
pub use error::{CliError, CliResult};

//! Command-line pipeline: phantom generation, pseudo-labeling, training,
//! evaluation and report tables. The `lvkd` binary is a thin wrapper over
//! these functions.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};

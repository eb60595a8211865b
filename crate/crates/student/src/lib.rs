//! Lightweight recurrent student segmenter and its distillation loop.

pub mod cell;
pub mod checkpoint;
pub mod config;
pub mod distillation;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod real;

pub use config::{flops_estimate, param_count, ConvLstmCellConfig, ModelConfig};
pub use error::{Result, StudentError};
pub use model::{build_model, Model, ModelState};

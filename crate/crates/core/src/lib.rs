//! Data model, phantom generator and evaluation protocols for distilling a
//! streaming left-ventricle segmenter from a teacher's pseudo-labels.

pub mod annotator_bounds;
pub mod data_model;
pub mod error;
pub mod io;
pub mod lvm_eval;
pub mod phantom;
pub mod phase_detect;
pub mod reference;
pub mod scaling_laws;
pub mod seg_metrics;

pub use error::{Error, Result};

//! Three-stage deep clustering of radar pulses: contrastive pretext
//! training, pseudo-supervised fine-tuning on mined cluster cores, and
//! self-labeling with per-class confidence thresholds.

pub mod config;
mod error;
pub mod losses;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};

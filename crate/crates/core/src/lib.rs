//! Radar intra-pulse waveform toolkit: signal primitives, the twelve
//! waveform classes, propagation channel, IQ augmentations, dataset
//! generation and storage, and clustering metrics.

pub mod augment;
pub mod channel;
pub mod dataset;
mod error;
pub mod exec;
pub mod metrics;
pub mod rng;
pub mod signal;
pub mod stats;
pub mod waveform;

pub use error::{Error, Result};
pub use exec::Exec;
pub use signal::IqSignal;

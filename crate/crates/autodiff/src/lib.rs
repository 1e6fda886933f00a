//! Reverse-mode automatic differentiation over dense real tensors.
//!
//! Operations are recorded on a [`Graph`] tape; [`Graph::backward`] walks it
//! in reverse and accumulates exact gradients. Model weights live in a
//! [`ParamStore`] and are copied onto the tape for each step.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod ops;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use ops::norm::BatchStats;
pub use params::{ParamId, ParamStore};
pub use scalar::Real;
pub use tensor::{numel, Tensor};

//! Evolution-preserving trajectory descriptors.
//!
//! Convolutional feature maps are normalized, sampled along dense
//! trajectories and rank pooled into per-trajectory descriptors. Descriptors
//! are encoded as Fisher vectors against a PCA + diagonal GMM model, pooled
//! to video level and classified with one-vs-rest linear SVMs.

pub mod classify;
pub mod encode;
pub mod error;
pub mod io;
pub mod normalize;
pub mod pipeline;
pub mod synth;
pub mod trajpool;
pub mod types;
pub mod videopool;

pub use error::{EptError, Result};
pub use types::*;

//! Identity-consistent "magic-face" video editing at desk scale.
//!
//! The pipeline forges a paired face dataset procedurally, trains a
//! prompt-conditioned and a source-image-conditioned latent diffusion model,
//! edits videos frame by frame with blended guidance, smooths the result
//! temporally and scores identity consistency.

pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod effects;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod sampler;
pub mod synthface;
pub mod temporal;

pub use error::{Error, Result};

//! Desk-scale video diffusion stack: a factored spatial-temporal diffusion
//! transformer over a stacked causal latent codec, trained with rectified
//! flow on bucketed multi-resolution batches.

pub mod bucket;
pub mod codec;
pub mod conditioning;
pub mod dataprep;
pub mod error;
pub mod flow;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod stdit;

pub use error::{Error, Result};

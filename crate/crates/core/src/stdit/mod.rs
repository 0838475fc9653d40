//! Spatial-temporal diffusion transformer over latent token grids.
//!
//! Each block runs per-frame spatial attention, per-location temporal
//! attention (rotary positions), cross-attention to text tokens and an MLP,
//! modulated per frame by the timestep and fps embeddings.

mod attention;
mod model;

pub use attention::{attention_logits, g_qk_normalize, qk_normalize, Attention, QK_EPS};
pub use model::{sinusoidal, Stdit, StditCond, StditConfig};

//! Frame-mask conditioning, per-frame timesteps, score-augmented captions
//! and the deterministic text embedding.

mod caption;
mod mask;
mod text;

pub use caption::{format_caption, parse_caption, CameraMotion, ScoredCaption};
pub use mask::{assign_timesteps, max_k, parse_condition, sample_pattern, FrameMask, MaskPattern};
pub use text::{embed_text, token_row, TextEmbedding};

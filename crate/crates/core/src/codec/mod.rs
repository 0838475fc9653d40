//! Stacked video codec: 8×8 spatial compression followed by causal 4×
//! temporal compression.

mod metrics;
mod model;
mod train;
mod video;

pub use metrics::{metrics, psnr, ssim, Quality, PSNR_CAP_DB};
pub use model::{identity_loss, CausalCodec, CodecConfig, CodecPass, PATCH, TEMPORAL_STRIDE};
pub use train::{fit_stats, train_codec, CodecSchedule, CodecTrainer};
pub use video::{latent_frames, segment_clips, ChannelStats, LatentVideo, VideoTensor};

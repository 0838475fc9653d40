//! Rectified-flow objective, timestep sampling, latent normalization and
//! the Euler sampler.

mod loss;
mod path;
mod sampler;
pub mod toy;

pub use loss::{
    g_masked_mse, masked_mse, noised_sample, training_loss, validation_loss, NoisedSample, VelocityModel,
    VALIDATION_TIMESTEPS,
};
pub use path::{
    channel_denormalize, channel_normalize, interpolate, noise_like, sample_timestep, shift_alpha, shift_timestep,
    velocity_target, FlowConfig, REFERENCE_TOKENS,
};
pub use sampler::{euler_from_noise, euler_sample, SampleCondition};

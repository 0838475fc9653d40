use crate::codec::{latent_frames, CausalCodec, LatentVideo, VideoTensor, PATCH};
use crate::conditioning::parse_condition;
use crate::error::{Error, Result};
use crate::flow::{channel_denormalize, channel_normalize, euler_sample, SampleCondition};
use crate::numerics::Tensor;
use crate::rng;
use crate::stdit::{Stdit, StditCond};

use super::data::{caption_tokens, fit_clip};

/// Conditioning frames for generation: a mask spec over latent frames and
/// the image or video providing them.
#[derive(Clone, Debug)]
pub struct ConditionInput {
    pub spec: String,
    pub video: VideoTensor,
}

#[derive(Clone, Debug)]
pub struct GenerateRequest {
    pub prompt: String,
    pub frames: usize,
    /// Square side in pixels (multiple of 8).
    pub resolution: usize,
    pub fps: f64,
    pub steps: usize,
    pub seed: u64,
    pub text_max_len: usize,
    pub condition: Option<ConditionInput>,
}

/// Samples a latent with the Euler sampler and decodes it. Conditioned
/// latent frame `i` is the codec latent `i` of the conditioning input
/// (fitted to the output size) and is copied into the result unchanged
/// before decoding.
pub fn generate(model: &Stdit, codec: &CausalCodec, req: &GenerateRequest) -> Result<VideoTensor> {
    if req.resolution == 0 || req.resolution % PATCH != 0 {
        return Err(Error::Geometry(format!("resolution {} is not a positive multiple of {}", req.resolution, PATCH)));
    }
    if req.frames == 0 {
        return Err(Error::Argument("frames must be >= 1".into()));
    }
    let side = req.resolution / PATCH;
    let tl = latent_frames(req.frames);
    let shape = [tl, side, side, codec.latent_channels()];
    let text = caption_tokens(&req.prompt, req.text_max_len, model.cfg.text_dim)?;
    let fps = req.fps;
    let predict = |x: &Tensor<f32>, t: &[f64]| model.forward(x, &StditCond { timesteps: t, fps, text: &text });
    let mut r = rng::stream(req.seed, &[rng::label("sample.noise")]);
    let per = side * side * codec.latent_channels();

    let Some(c) = &req.condition else {
        let z = euler_sample(&predict, &shape, None, req.steps, &mut r)?;
        let z = channel_denormalize(&z, &codec.stats)?;
        return codec.decode(&LatentVideo::new(z, codec.stats.clone())?, req.frames);
    };
    let mask = parse_condition(&c.spec, tl)?;
    let input = fit_clip(&c.video, req.resolution, req.resolution, 0, c.video.frames().min(req.frames))?;
    let zc = codec.encode(&input)?.latents;
    let mut raw = vec![0.0f32; tl * per];
    for f in (0..tl).filter(|&f| mask.is_conditioning(f)) {
        if f >= zc.shape()[0] {
            return Err(Error::Argument(format!(
                "condition frame {} needs latent {} but the input has {}",
                f,
                f,
                zc.shape()[0]
            )));
        }
        raw[f * per..(f + 1) * per].copy_from_slice(&zc.data()[f * per..(f + 1) * per]);
    }
    let raw = Tensor::new(shape.to_vec(), raw)?;
    let x0 = channel_normalize(&raw, &codec.stats)?;
    let z = euler_sample(&predict, &shape, Some(&SampleCondition { mask: &mask, x0: &x0 }), req.steps, &mut r)?;
    let z = channel_denormalize(&z, &codec.stats)?;
    let mut data = z.into_data();
    for f in (0..tl).filter(|&f| mask.is_conditioning(f)) {
        data[f * per..(f + 1) * per].copy_from_slice(&raw.data()[f * per..(f + 1) * per]);
    }
    let z = Tensor::new(shape.to_vec(), data)?;
    codec.decode(&LatentVideo::new(z, codec.stats.clone())?, req.frames)
}

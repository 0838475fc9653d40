//! Stacked latent codec: a per-frame 8×8 spatial autoencoder feeding a
//! causal 4× temporal autoencoder.
//!
//! The temporal stack front-pads the spatial latents with three zero frames
//! and groups the padded sequence in windows of four, so latent frame `i`
//! sees input frames `4i-3..=4i` (frame 0 alone for `i = 0`). Trailing
//! windows are zero-padded.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::video::{latent_frames, ChannelStats, LatentVideo, VideoTensor};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Bound, Graph, Mlp, ParamStore, Scalar, Tensor, Var};
use crate::rng;

pub const PATCH: usize = 8;
pub const TEMPORAL_STRIDE: usize = 4;
const FRONT_PAD: usize = TEMPORAL_STRIDE - 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub image_channels: usize,
    pub latent_channels: usize,
    pub spatial_hidden: usize,
    pub temporal_hidden: usize,
    pub identity_weight: f64,
    /// Training stage, 1 to 3.
    pub stage: u8,
    /// Keep the spatial autoencoder fixed while training the temporal stack.
    pub freeze_spatial: bool,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            latent_channels: 4,
            spatial_hidden: 32,
            temporal_hidden: 32,
            identity_weight: 1.0,
            stage: 1,
            freeze_spatial: true,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::Config(format!("codec stage must be 1, 2 or 3, got {}", self.stage)));
        }
        if [self.image_channels, self.latent_channels, self.spatial_hidden, self.temporal_hidden].contains(&0) {
            return Err(Error::Config("codec widths must be positive".into()));
        }
        if !(self.identity_weight >= 0.0 && self.identity_weight.is_finite()) {
            return Err(Error::Config("identity weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Intermediate graph values of one encode/decode pass.
pub struct CodecPass {
    pub z2d: Var,
    pub z3d: Var,
    pub z2d_rec: Var,
    pub video_rec: Var,
}

#[derive(Clone, Debug)]
pub struct CausalCodec {
    pub cfg: CodecConfig,
    pub params: ParamStore,
    pub stats: ChannelStats,
    spatial_enc: Mlp,
    spatial_dec: Mlp,
    temporal_enc: Mlp,
    temporal_dec: Mlp,
}

impl CausalCodec {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(cfg.seed, &[rng::label("codec.init")]);
        let mut params = ParamStore::new();
        let pix = PATCH * PATCH * cfg.image_channels;
        let cz = cfg.latent_channels;
        let spatial_enc = Mlp::new(&mut params, &mut r, "spatial.enc", (pix, cfg.spatial_hidden, cz), Activation::Silu);
        let spatial_dec = Mlp::new(&mut params, &mut r, "spatial.dec", (cz, cfg.spatial_hidden, pix), Activation::Silu);
        let temporal_enc = Mlp::new(&mut params, &mut r, "temporal.enc", (TEMPORAL_STRIDE * cz, cfg.temporal_hidden, cz), Activation::Silu);
        let temporal_dec = Mlp::new(&mut params, &mut r, "temporal.dec", (cz, cfg.temporal_hidden, TEMPORAL_STRIDE * cz), Activation::Silu);
        let mut codec = Self {
            stats: ChannelStats::identity(cz),
            cfg,
            params,
            spatial_enc,
            spatial_dec,
            temporal_enc,
            temporal_dec,
        };
        codec.apply_freeze();
        Ok(codec)
    }

    pub fn set_stage(&mut self, stage: u8, freeze_spatial: bool) -> Result<()> {
        self.cfg.stage = stage;
        self.cfg.freeze_spatial = freeze_spatial;
        self.cfg.validate()?;
        self.apply_freeze();
        Ok(())
    }

    fn apply_freeze(&mut self) {
        self.params.set_trainable_prefix("spatial.", !self.cfg.freeze_spatial);
    }

    pub fn latent_channels(&self) -> usize {
        self.cfg.latent_channels
    }

    fn check_geometry(&self, shape: &[usize]) -> Result<()> {
        let (h, w, c) = (shape[1], shape[2], shape[3]);
        if h % PATCH != 0 || w % PATCH != 0 {
            return Err(Error::Geometry(format!("height {} and width {} must be divisible by {}", h, w, PATCH)));
        }
        if c != self.cfg.image_channels {
            return Err(Error::Geometry(format!("expected {} channels, got {}", self.cfg.image_channels, c)));
        }
        Ok(())
    }

    /// Per-frame spatial encoding of `video [T, H, W, C]` to `[T, H/8, W/8, Cz]`.
    pub fn g_encode_spatial<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, video: Var) -> Result<Var> {
        let s = g.shape(video).to_vec();
        if s.len() != 4 {
            return Err(Error::Geometry(format!("video must be rank 4, got {:?}", s)));
        }
        self.check_geometry(&s)?;
        let (t, h, w, c) = (s[0], s[1] / PATCH, s[2] / PATCH, s[3]);
        let x = g.reshape(video, &[t, h, PATCH, w, PATCH, c])?;
        let x = g.permute(x, &[0, 1, 3, 2, 4, 5])?;
        let x = g.reshape(x, &[t * h * w, PATCH * PATCH * c])?;
        let z = self.spatial_enc.forward(g, b, x)?;
        g.reshape(z, &[t, h, w, self.cfg.latent_channels])
    }

    /// Causal temporal encoding of `[T, h, w, Cz]` to `[T', h, w, Cz]`.
    pub fn g_encode_temporal<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, z2d: Var) -> Result<Var> {
        let s = g.shape(z2d).to_vec();
        let (t, h, w, cz) = (s[0], s[1], s[2], s[3]);
        if t == 0 {
            return Err(Error::Geometry("need at least one frame".into()));
        }
        let tl = latent_frames(t);
        let tail = TEMPORAL_STRIDE * tl - FRONT_PAD - t;
        let mut parts = vec![g.constant(Tensor::zeros(&[FRONT_PAD, h, w, cz])), z2d];
        if tail > 0 {
            parts.push(g.constant(Tensor::zeros(&[tail, h, w, cz])));
        }
        let x = g.concat(&parts, 0)?;
        let x = g.reshape(x, &[tl, TEMPORAL_STRIDE, h, w, cz])?;
        let x = g.permute(x, &[0, 2, 3, 1, 4])?;
        let x = g.reshape(x, &[tl * h * w, TEMPORAL_STRIDE * cz])?;
        let z = self.temporal_enc.forward(g, b, x)?;
        g.reshape(z, &[tl, h, w, cz])
    }

    /// Inverse of the temporal stack, producing `frames` spatial latents.
    pub fn g_decode_temporal<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, z3d: Var, frames: usize) -> Result<Var> {
        let s = g.shape(z3d).to_vec();
        let (tl, h, w, cz) = (s[0], s[1], s[2], s[3]);
        check_target_frames(tl, frames)?;
        let x = g.reshape(z3d, &[tl * h * w, cz])?;
        let y = self.temporal_dec.forward(g, b, x)?;
        let y = g.reshape(y, &[tl, h, w, TEMPORAL_STRIDE, cz])?;
        let y = g.permute(y, &[0, 3, 1, 2, 4])?;
        let y = g.reshape(y, &[tl * TEMPORAL_STRIDE, h, w, cz])?;
        g.slice(y, 0, FRONT_PAD, frames)
    }

    /// Per-frame spatial decoding to pixels in `(0, 1)`.
    pub fn g_decode_spatial<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, z2d: Var) -> Result<Var> {
        let s = g.shape(z2d).to_vec();
        let (t, h, w, cz) = (s[0], s[1], s[2], s[3]);
        let c = self.cfg.image_channels;
        let x = g.reshape(z2d, &[t * h * w, cz])?;
        let y = self.spatial_dec.forward(g, b, x)?;
        let y = g.sigmoid(y)?;
        let y = g.reshape(y, &[t, h, w, PATCH, PATCH, c])?;
        let y = g.permute(y, &[0, 1, 3, 2, 4, 5])?;
        g.reshape(y, &[t, h * PATCH, w * PATCH, c])
    }

    /// Full encode/decode pass recorded on `g`.
    pub fn g_pass<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, video: Var) -> Result<CodecPass> {
        let frames = g.shape(video)[0];
        let z2d = self.g_encode_spatial(g, b, video)?;
        let z3d = self.g_encode_temporal(g, b, z2d)?;
        let z2d_rec = self.g_decode_temporal(g, b, z3d, frames)?;
        let video_rec = self.g_decode_spatial(g, b, z2d_rec)?;
        Ok(CodecPass { z2d, z3d, z2d_rec, video_rec })
    }

    /// Training objective for the configured stage.
    ///
    /// Stages 1 and 2 reconstruct the spatial latents; stage 1 adds the
    /// weighted identity loss. Stage 3 reconstructs pixels.
    pub fn g_loss<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, video: Var) -> Result<Var> {
        let pass = self.g_pass(g, b, video)?;
        match self.cfg.stage {
            1 => {
                let rec = g.mse(pass.z2d_rec, pass.z2d)?;
                let id = identity_loss(g, pass.z3d, pass.z2d)?;
                let id = g.scale(id, self.cfg.identity_weight)?;
                g.add(rec, id)
            }
            2 => g.mse(pass.z2d_rec, pass.z2d),
            _ => g.mse(pass.video_rec, video),
        }
    }

    /// Pixel reconstruction loss used to pretrain the spatial autoencoder on frames.
    pub fn g_spatial_loss<S: Scalar>(&self, g: &mut Graph<S>, b: &Bound, video: Var) -> Result<Var> {
        let z = self.g_encode_spatial(g, b, video)?;
        let rec = self.g_decode_spatial(g, b, z)?;
        g.mse(rec, video)
    }

    fn run<T>(&self, f: impl FnOnce(&mut Graph<f32>, &Bound) -> Result<T>) -> Result<T> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        f(&mut g, &b)
    }

    pub fn encode_spatial(&self, v: &VideoTensor) -> Result<Tensor<f32>> {
        self.run(|g, b| {
            let x = g.constant(v.tensor().clone());
            let z = self.g_encode_spatial(g, b, x)?;
            Ok(g.value(z).clone())
        })
    }

    pub fn encode_temporal(&self, z2d: &Tensor<f32>) -> Result<LatentVideo> {
        if z2d.ndim() != 4 || z2d.shape()[3] != self.cfg.latent_channels {
            return Err(Error::dim("encode_temporal", format!("bad spatial latent {:?}", z2d.shape())));
        }
        let z = self.run(|g, b| {
            let x = g.constant(z2d.clone());
            let z = self.g_encode_temporal(g, b, x)?;
            Ok(g.value(z).clone())
        })?;
        LatentVideo::new(z, self.stats.clone())
    }

    pub fn encode(&self, v: &VideoTensor) -> Result<LatentVideo> {
        let z2d = self.encode_spatial(v)?;
        self.encode_temporal(&z2d)
    }

    /// Decodes to `frames` pixel frames; output is clamped into `[0, 1]`.
    pub fn decode(&self, z: &LatentVideo, frames: usize) -> Result<VideoTensor> {
        check_target_frames(z.frames(), frames)?;
        let out = self.run(|g, b| {
            let x = g.constant(z.latents.clone());
            let z2d = self.g_decode_temporal(g, b, x, frames)?;
            let v = self.g_decode_spatial(g, b, z2d)?;
            Ok(g.value(v).clone())
        })?;
        VideoTensor::new(out.map(|p| p.clamp(0.0, 1.0)))
    }

    pub fn roundtrip(&self, v: &VideoTensor) -> Result<VideoTensor> {
        self.decode(&self.encode(v)?, v.frames())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.params.save_dir(dir, "")?;
        let cfg = serde_json::to_string_pretty(&self.cfg).expect("config serializes");
        let p = dir.join("codec.json");
        std::fs::write(&p, cfg).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("latent.stats");
        std::fs::write(&p, self.stats.to_sidecar()).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("codec.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let cfg: CodecConfig = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
        let mut codec = Self::new(cfg)?;
        codec.params.load_dir(dir, "")?;
        let p = dir.join("latent.stats");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        codec.stats = ChannelStats::from_sidecar(&text).map_err(|d| Error::format(&p, d))?;
        Ok(codec)
    }
}

fn check_target_frames(latent: usize, frames: usize) -> Result<()> {
    if frames == 0 || latent_frames(frames) != latent {
        return Err(Error::Geometry(format!(
            "{} frames do not correspond to {} latent frames",
            frames, latent
        )));
    }
    Ok(())
}

/// Mean squared difference between temporal latents broadcast back over
/// their input frames and the per-frame spatial latents.
pub fn identity_loss<S: Scalar>(g: &mut Graph<S>, z3d: Var, z2d: Var) -> Result<Var> {
    let (s3, s2) = (g.shape(z3d).to_vec(), g.shape(z2d).to_vec());
    if s3.len() != 4 || s2.len() != 4 || s3[1..] != s2[1..] || latent_frames(s2[0].max(1)) != s3[0] || s2[0] == 0 {
        return Err(Error::dim("identity_loss", format!("{:?} vs {:?}", s3, s2)));
    }
    let (tl, h, w, c) = (s3[0], s3[1], s3[2], s3[3]);
    let x = g.reshape(z3d, &[tl, 1, h, w, c])?;
    let x = g.broadcast_to(x, &[tl, TEMPORAL_STRIDE, h, w, c])?;
    let x = g.reshape(x, &[tl * TEMPORAL_STRIDE, h, w, c])?;
    let x = g.slice(x, 0, FRONT_PAD, s2[0])?;
    g.mse(x, z2d)
}

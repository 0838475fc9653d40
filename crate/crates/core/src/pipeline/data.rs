//! Clip geometry, latent encoding and caching for training and validation.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::bucket::{Bucket, SampleMeta};
use crate::codec::{CausalCodec, VideoTensor};
use crate::conditioning::embed_text;
use crate::error::{Error, Result};
use crate::flow::channel_normalize;
use crate::numerics::Tensor;
use crate::rng;

use super::synth::DatasetEntry;

/// Resizes `v` to cover `height × width` (box-filtered bilinear samples)
/// and centre-crops, keeping frames `start..start + frames`.
pub fn fit_clip(v: &VideoTensor, height: usize, width: usize, start: usize, frames: usize) -> Result<VideoTensor> {
    if frames == 0 || start + frames > v.frames() {
        return Err(Error::Argument(format!("frames {}..{} of a {}-frame clip", start, start + frames, v.frames())));
    }
    let (h, w) = (v.height() as f64, v.width() as f64);
    let scale = (height as f64 / h).max(width as f64 / w);
    if (scale - 1.0).abs() < 1e-12 && height == v.height() && width == v.width() {
        return v.frames_range(start, frames);
    }
    let oy = (h * scale - height as f64) / 2.0;
    let ox = (w * scale - width as f64) / 2.0;
    // supersample the source footprint when shrinking
    let k = (1.0 / scale).ceil().max(1.0) as usize;
    let sample = |f: usize, sy: f64, sx: f64, c: usize| {
        let sy = sy.clamp(0.0, h - 1.0);
        let sx = sx.clamp(0.0, w - 1.0);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(v.height() - 1), (x0 + 1).min(v.width() - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let p = |y, x| v.pixel(f, y, x, c) as f64;
        (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1))
    };
    Ok(VideoTensor::from_fn(frames, height, width, v.channels(), |f, y, x, c| {
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                let ty = (y as f64 + (i as f64 + 0.5) / k as f64 + oy) / scale - 0.5;
                let tx = (x as f64 + (j as f64 + 0.5) / k as f64 + ox) / scale - 0.5;
                acc += sample(start + f, ty, tx, c);
            }
        }
        acc / (k * k) as f64
    }))
}

pub fn meta(e: &DatasetEntry) -> SampleMeta {
    SampleMeta {
        id: e.id.clone(),
        width: e.width,
        height: e.height,
        frames: e.frames,
        fps: e.fps,
    }
}

/// Text tokens `[L, text_dim]` for a caption (at least one row).
pub fn caption_tokens(caption: &str, max_len: usize, dim: usize) -> Result<Tensor<f32>> {
    let e = embed_text(caption, max_len, dim)?;
    if e.token_count() == 0 {
        // an empty caption still needs a key for cross-attention
        return Ok(embed_text("<empty>", 1, dim)?.tokens());
    }
    Ok(e.tokens())
}

/// Normalized latents of dataset clips fitted to bucket geometry, encoded
/// once and cached. The temporal window for a (clip, bucket) pair is fixed
/// by the seed.
pub struct LatentStore<'a> {
    codec: &'a CausalCodec,
    entries: &'a [DatasetEntry],
    index: HashMap<String, usize>,
    seed: u64,
    videos: Mutex<HashMap<usize, VideoTensor>>,
    cache: Mutex<HashMap<(usize, usize, usize, usize), Tensor<f32>>>,
}

impl<'a> LatentStore<'a> {
    pub fn new(codec: &'a CausalCodec, entries: &'a [DatasetEntry], seed: u64) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Self {
            codec,
            entries,
            index,
            seed,
            videos: Mutex::new(HashMap::new()),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn entry(&self, id: &str) -> Result<&DatasetEntry> {
        self.index
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::Argument(format!("unknown clip `{}`", id)))
    }

    fn video(&self, i: usize) -> Result<VideoTensor> {
        if let Some(v) = self.videos.lock().expect("video cache").get(&i) {
            return Ok(v.clone());
        }
        let v = VideoTensor::read(&self.entries[i].path)?;
        self.videos.lock().expect("video cache").insert(i, v.clone());
        Ok(v)
    }

    /// Latent for clip `id` at `height × width × frames`, starting at a
    /// seeded frame (or frame 0 when `from_start`).
    pub fn latent(&self, id: &str, height: usize, width: usize, frames: usize, from_start: bool) -> Result<Tensor<f32>> {
        let i = *self.index.get(id).ok_or_else(|| Error::Argument(format!("unknown clip `{}`", id)))?;
        let key = (i, height * 4096 + width, frames, from_start as usize);
        if let Some(z) = self.cache.lock().expect("latent cache").get(&key) {
            return Ok(z.clone());
        }
        let v = self.video(i)?;
        if frames > v.frames() {
            return Err(Error::Argument(format!("clip `{}` has {} frames, need {}", id, v.frames(), frames)));
        }
        let start = if from_start {
            0
        } else {
            let u = rng::uniform_at(self.seed, &[rng::label("data.window"), rng::label(id), height as u64, width as u64, frames as u64]);
            (u * (v.frames() - frames + 1) as f64) as usize
        };
        let clip = fit_clip(&v, height, width, start, frames)?;
        let z = self.codec.encode(&clip)?;
        let z = channel_normalize(&z.latents, &self.codec.stats)?;
        self.cache.lock().expect("latent cache").insert(key, z.clone());
        Ok(z)
    }

    pub fn bucket_latent(&self, id: &str, b: &Bucket) -> Result<Tensor<f32>> {
        let (h, w) = b.dims();
        self.latent(id, h, w, b.frames, false)
    }
}

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{CausalCodec, PATCH};
use super::video::{ChannelStats, VideoTensor};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Graph};
use crate::rng::{self, Rng};

/// Step counts and data mix for desk-scale codec training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecSchedule {
    /// Frame-level pretraining of the spatial autoencoder.
    pub spatial_steps: usize,
    /// Steps for temporal stages 1, 2 and 3.
    pub stage_steps: [usize; 3],
    pub lr: f64,
    pub clip_frames: usize,
    /// Share of video (vs single-frame image) samples in stages 1 and 2.
    pub video_fraction: f64,
    /// Longest clip drawn by mixed-length stage 3.
    pub max_mixed_frames: usize,
    /// Square crop side in pixels (multiple of 8).
    pub crop: usize,
    pub batch: usize,
}

impl Default for CodecSchedule {
    fn default() -> Self {
        Self {
            spatial_steps: 600,
            stage_steps: [400, 400, 600],
            lr: 3e-3,
            clip_frames: 17,
            video_fraction: 0.8,
            max_mixed_frames: 34,
            crop: 16,
            batch: 2,
        }
    }
}

impl CodecSchedule {
    pub fn total_steps(&self) -> usize {
        self.spatial_steps + self.stage_steps.iter().sum::<usize>()
    }
}

pub struct CodecTrainer {
    pub codec: CausalCodec,
    opt: Adam,
}

impl CodecTrainer {
    pub fn new(codec: CausalCodec, lr: f64) -> Self {
        let opt = Adam::new(
            AdamConfig {
                lr,
                ..Default::default()
            },
            &codec.params,
        );
        Self { codec, opt }
    }

    fn apply(&mut self, clips: &[VideoTensor], spatial_only: bool) -> Result<f64> {
        if clips.is_empty() {
            return Err(Error::Precondition("empty codec batch".into()));
        }
        let mut g = Graph::<f32>::new();
        let b = self.codec.params.bind(&mut g, true);
        let mut losses = Vec::with_capacity(clips.len());
        for c in clips {
            let x = g.constant(c.tensor().clone());
            let l = if spatial_only {
                self.codec.g_spatial_loss(&mut g, &b, x)?
            } else {
                self.codec.g_loss(&mut g, &b, x)?
            };
            losses.push(l);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l)?;
        }
        let loss = g.scale(total, 1.0 / clips.len() as f64)?;
        let value = g.value(loss).data()[0] as f64;
        let mut grads = g.backward(loss)?;
        let grads = self.codec.params.collect_grads(&b, &mut grads);
        self.opt.step(&mut self.codec.params, &grads)?;
        Ok(value)
    }

    /// One optimizer step on the current stage objective.
    pub fn step(&mut self, clips: &[VideoTensor]) -> Result<f64> {
        self.apply(clips, false)
    }

    /// One optimizer step of per-frame pixel reconstruction, spatial path only.
    pub fn spatial_step(&mut self, frames: &[VideoTensor]) -> Result<f64> {
        let frozen = self.codec.cfg.freeze_spatial;
        self.codec.params.set_trainable_prefix("spatial.", true);
        self.codec.params.set_trainable_prefix("temporal.", false);
        let out = self.apply(frames, true);
        self.codec.params.set_trainable_prefix("temporal.", true);
        self.codec.params.set_trainable_prefix("spatial.", !frozen);
        out
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.cfg.lr = lr;
    }

    /// Clears the optimizer moments, keeping the config.
    pub fn reset_optimizer(&mut self) {
        self.opt = Adam::new(self.opt.cfg.clone(), &self.codec.params);
    }

    pub fn into_codec(self) -> CausalCodec {
        self.codec
    }
}

const STAGE3_LR_FACTOR: f64 = 0.5;

/// Linear decay from `lr` to `lr / 10` across a phase of `steps`.
fn decayed(lr: f64, step: usize, steps: usize) -> f64 {
    let frac = step as f64 / steps.max(1) as f64;
    lr * (1.0 - 0.9 * frac)
}

fn crop(v: &VideoTensor, start: usize, len: usize, side: usize, r: &mut Rng) -> Result<VideoTensor> {
    let ch = (side.min(v.height()) / PATCH) * PATCH;
    let cw = (side.min(v.width()) / PATCH) * PATCH;
    if ch == 0 || cw == 0 {
        return Err(Error::Geometry(format!("clip {}x{} smaller than one patch", v.height(), v.width())));
    }
    let y0 = r.random_range(0..=v.height() - ch);
    let x0 = r.random_range(0..=v.width() - cw);
    Ok(VideoTensor::from_fn(len, ch, cw, v.channels(), |f, y, x, c| {
        v.pixel(start + f, y0 + y, x0 + x, c) as f64
    }))
}

/// Draws one training sample: a single frame, a fixed-length clip, or
/// (mixed) a clip of random length up to `max_frames`.
fn draw(data: &[VideoTensor], sched: &CodecSchedule, r: &mut Rng, image: bool, mixed: bool) -> Result<VideoTensor> {
    let v = &data[r.random_range(0..data.len())];
    let len = if image {
        1
    } else if mixed {
        r.random_range(1..=sched.max_mixed_frames.min(v.frames()))
    } else {
        sched.clip_frames.min(v.frames())
    };
    let start = r.random_range(0..=v.frames() - len);
    crop(v, start, len, sched.crop, r)
}

/// Full desk-scale schedule: spatial pretraining, then temporal stages 1-3,
/// then channel statistics fitted on the training clips.
///
/// `log` receives `(phase, step, loss)`; phase 0 is spatial pretraining.
pub fn train_codec(
    codec: CausalCodec,
    data: &[VideoTensor],
    sched: &CodecSchedule,
    seed: u64,
    mut log: impl FnMut(u8, usize, f64),
) -> Result<CausalCodec> {
    if data.is_empty() {
        return Err(Error::Precondition("codec training needs at least one clip".into()));
    }
    let mut trainer = CodecTrainer::new(codec, sched.lr);
    for step in 0..sched.spatial_steps {
        let mut r = rng::stream(seed, &[rng::label("codec.spatial"), step as u64]);
        let frames = (0..sched.batch)
            .map(|_| draw(data, sched, &mut r, true, false))
            .collect::<Result<Vec<_>>>()?;
        trainer.set_lr(decayed(sched.lr, step, sched.spatial_steps));
        let loss = trainer.spatial_step(&frames)?;
        log(0, step, loss);
    }
    for stage in 1..=3u8 {
        trainer.codec.set_stage(stage, stage < 3)?;
        trainer.reset_optimizer();
        let steps = sched.stage_steps[stage as usize - 1];
        // stage 3 fine-tunes the whole stack
        let lr = if stage == 3 { sched.lr * STAGE3_LR_FACTOR } else { sched.lr };
        for step in 0..steps {
            let mut r = rng::stream(seed, &[rng::label("codec.stage"), stage as u64, step as u64]);
            let clips = (0..sched.batch)
                .map(|_| {
                    let image = stage < 3 && r.random::<f64>() >= sched.video_fraction;
                    draw(data, sched, &mut r, image, stage == 3)
                })
                .collect::<Result<Vec<_>>>()?;
            trainer.set_lr(decayed(lr, step, steps));
            let loss = trainer.step(&clips)?;
            log(stage, step, loss);
        }
    }
    let mut codec = trainer.into_codec();
    codec.stats = fit_stats(&codec, data)?;
    Ok(codec)
}

/// Channel statistics of the codec's latents over `data`.
pub fn fit_stats(codec: &CausalCodec, data: &[VideoTensor]) -> Result<ChannelStats> {
    let latents = data
        .iter()
        .map(|v| codec.encode(v).map(|z| z.latents))
        .collect::<Result<Vec<_>>>()?;
    ChannelStats::fit(latents.iter())
}

use std::fs;
use std::path::Path;
use std::sync::mpsc::sync_channel;

use serde::{Deserialize, Serialize};

use super::config::{KitConfig, StageConfig};
use super::data::{caption_tokens, meta, LatentStore};
use super::synth::{DatasetEntry, Split};
use crate::bucket::{plan_epoch, BucketTable, PlannedBatch, SampleMeta};
use crate::codec::CausalCodec;
use crate::conditioning::{sample_pattern, FrameMask, MaskPattern};
use crate::error::{Error, Result};
use crate::flow::{g_masked_mse, noise_like, noised_sample, sample_timestep, FlowConfig};
use crate::numerics::{Adam, AdamConfig, Graph, Tensor};
use crate::rng;
use crate::stdit::{Stdit, StditCond};

/// Batches queued ahead of the optimizer.
const PREFETCH: usize = 2;
/// Consecutive epochs without a full batch before giving up.
const MAX_EMPTY_EPOCHS: usize = 64;

/// Random choices for one training sample.
#[derive(Clone, Debug)]
pub struct SampleDraw {
    pub pattern: MaskPattern,
    pub mask: FrameMask,
    pub t: f64,
    pub noise: Tensor<f32>,
}

/// Mask, timestep and noise for sample `j` of `step` in `stage`. Depends
/// only on its arguments.
pub fn draw_sample(seed: u64, stage: u32, step: usize, j: usize, shape: &[usize], mask_prob: f64, flow: &FlowConfig) -> Result<SampleDraw> {
    let mut r = rng::stream(seed, &[rng::label("train.sample"), stage as u64, step as u64, j as u64]);
    let (pattern, mask) = sample_pattern(&mut r, shape[0], mask_prob)?;
    let tokens = shape[..shape.len() - 1].iter().product();
    let t = sample_timestep(&mut r, flow, tokens)?;
    let noise = noise_like(&mut r, shape);
    Ok(SampleDraw { pattern, mask, t, noise })
}

/// Position in the schedule: the next step to run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainState {
    /// Index into the ordered stage list; equal to its length when done.
    pub stage_index: usize,
    pub step: usize,
    pub global_step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub stage: u32,
    pub step: usize,
    pub global_step: usize,
    pub loss: f64,
    pub bucket: String,
    pub batch: usize,
    /// Samples that received a conditioning mask.
    pub masked: usize,
    /// Samples long enough to be masked (two or more latent frames).
    pub eligible: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub stage: u32,
    pub steps: usize,
    pub mean_loss: f64,
    pub masked: usize,
    pub eligible: usize,
}

impl StageSummary {
    pub fn masked_fraction(&self) -> f64 {
        if self.eligible == 0 {
            0.0
        } else {
            self.masked as f64 / self.eligible as f64
        }
    }
}

pub struct Trainer<'a> {
    pub cfg: &'a KitConfig,
    pub model: Stdit,
    pub opt: Adam,
    pub state: TrainState,
    stages: Vec<(u32, StageConfig, BucketTable)>,
    store: LatentStore<'a>,
    train: Vec<SampleMeta>,
}

impl<'a> Trainer<'a> {
    /// Fresh model and optimizer at the start of the first stage.
    pub fn new(cfg: &'a KitConfig, codec: &'a CausalCodec, entries: &'a [DatasetEntry]) -> Result<Self> {
        cfg.validate()?;
        if codec.latent_channels() != cfg.model.in_channels {
            return Err(Error::Config(format!(
                "codec has {} latent channels, model expects {}",
                codec.latent_channels(),
                cfg.model.in_channels
            )));
        }
        let model = Stdit::new(cfg.model.clone())?;
        let opt = Adam::new(AdamConfig::default(), &model.params);
        let stages = cfg
            .stages()?
            .into_iter()
            .map(|(id, s)| {
                let t = s.table(&cfg.buckets)?;
                Ok((id, s, t))
            })
            .collect::<Result<Vec<_>>>()?;
        let train: Vec<SampleMeta> = entries.iter().filter(|e| e.split == Split::Train).map(meta).collect();
        if train.is_empty() {
            return Err(Error::Precondition("training set is empty".into()));
        }
        Ok(Self {
            cfg,
            model,
            opt,
            state: TrainState { stage_index: 0, step: 0, global_step: 0 },
            stages,
            store: LatentStore::new(codec, entries, cfg.seed),
            train,
        })
    }

    /// Restores model, optimizer moments and schedule position.
    pub fn resume(cfg: &'a KitConfig, codec: &'a CausalCodec, entries: &'a [DatasetEntry], dir: &Path) -> Result<Self> {
        let mut t = Self::new(cfg, codec, entries)?;
        t.model = Stdit::load(dir.join("model"))?;
        if t.model.cfg != cfg.model {
            return Err(Error::Config("checkpoint model config differs from the current config".into()));
        }
        t.opt = Adam::new(AdamConfig::default(), &t.model.params);
        t.opt.load_dir(dir.join("adam"))?;
        let p = dir.join("state.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        t.state = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
        if t.state.stage_index > t.stages.len() {
            return Err(Error::format(&p, "stage index beyond the configured stages"));
        }
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save(dir.join("model"))?;
        let adam = dir.join("adam");
        fs::create_dir_all(&adam).map_err(|e| Error::io(&adam, e))?;
        self.opt.save_dir(&adam)?;
        let p = dir.join("state.json");
        let json = serde_json::to_string_pretty(&self.state).expect("state serializes");
        fs::write(&p, json).map_err(|e| Error::io(&p, e))
    }

    pub fn done(&self) -> bool {
        self.state.stage_index >= self.stages.len()
    }

    pub fn stage_ids(&self) -> Vec<u32> {
        self.stages.iter().map(|s| s.0).collect()
    }

    /// Batches for steps `0..steps` of stage `index`: epochs planned with
    /// per-epoch seeds and concatenated.
    pub fn stage_batches(&self, index: usize) -> Result<Vec<PlannedBatch>> {
        let (id, s, table) = &self.stages[index];
        let mut out = Vec::with_capacity(s.steps);
        let (mut epoch, mut empty) = (0u64, 0usize);
        while out.len() < s.steps {
            let seed = rng::derive_key(self.cfg.seed, &[rng::label("train.epoch"), *id as u64, epoch]);
            let plan = plan_epoch(&self.train, table, seed);
            if plan.batches.is_empty() {
                empty += 1;
                if empty >= MAX_EMPTY_EPOCHS {
                    return Err(Error::Precondition(format!("stage {}: no bucket ever fills a batch", id)));
                }
            } else {
                empty = 0;
            }
            out.extend(plan.batches);
            epoch += 1;
        }
        out.truncate(s.steps);
        Ok(out)
    }

    /// Runs until the schedule ends or `max_steps` steps have run, writing a
    /// checkpoint to `ckpt_root/stage<N>` at each stage boundary. Latents
    /// for upcoming batches are encoded on a second thread.
    pub fn run(&mut self, max_steps: Option<usize>, ckpt_root: Option<&Path>, mut on_step: impl FnMut(&StepReport)) -> Result<Vec<StageSummary>> {
        let mut summaries = Vec::new();
        let mut budget = max_steps.unwrap_or(usize::MAX);
        while !self.done() && budget > 0 {
            let index = self.state.stage_index;
            let (id, steps) = (self.stages[index].0, self.stages[index].1.steps);
            let batches = self.stage_batches(index)?;
            let start = self.state.step;
            let end = steps.min(start.saturating_add(budget));
            let mut summary = StageSummary { stage: id, steps: 0, mean_loss: 0.0, masked: 0, eligible: 0 };
            let Self { cfg, model, opt, state, stages, store, .. } = self;
            let stage = &stages[index];
            std::thread::scope(|scope| -> Result<()> {
                let (tx, rx) = sync_channel::<Result<Vec<Tensor<f32>>>>(PREFETCH);
                let (store_ref, batches_ref) = (&*store, &batches);
                scope.spawn(move || {
                    for b in &batches_ref[start..end] {
                        let bucket = &stage.2.buckets[b.bucket];
                        let z = b.ids.iter().map(|id| store_ref.bucket_latent(id, bucket)).collect();
                        if tx.send(z).is_err() {
                            break;
                        }
                    }
                });
                for step in start..end {
                    let latents = rx.recv().map_err(|_| Error::Evaluation("data loader stopped".into()))??;
                    let report = apply_step(cfg, model, opt, state, store, stage, step, &batches[step], &latents)?;
                    summary.steps += 1;
                    summary.mean_loss += report.loss;
                    summary.masked += report.masked;
                    summary.eligible += report.eligible;
                    on_step(&report);
                }
                Ok(())
            })?;
            budget -= end - start;
            summary.mean_loss /= summary.steps.max(1) as f64;
            if end == steps {
                self.state = TrainState { stage_index: index + 1, step: 0, global_step: self.state.global_step };
                if let Some(root) = ckpt_root {
                    self.save(&root.join(format!("stage{}", id)))?;
                }
            }
            summaries.push(summary);
        }
        Ok(summaries)
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_step(
    cfg: &KitConfig,
    model: &mut Stdit,
    opt: &mut Adam,
    state: &mut TrainState,
    store: &LatentStore,
    (id, stage, table): &(u32, StageConfig, BucketTable),
    step: usize,
    batch: &PlannedBatch,
    latents: &[Tensor<f32>],
) -> Result<StepReport> {
    let bucket = &table.buckets[batch.bucket];
    let mut g = Graph::<f32>::new();
    let b = model.params.bind(&mut g, true);
    let mut losses = Vec::with_capacity(batch.ids.len());
    let (mut masked, mut eligible) = (0, 0);
    for (j, (clip, x0)) in batch.ids.iter().zip(latents).enumerate() {
        let entry = store.entry(clip)?;
        let d = draw_sample(cfg.seed, *id, step, j, x0.shape(), stage.mask_prob, &cfg.flow)?;
        if x0.shape()[0] >= 2 {
            eligible += 1;
            masked += usize::from(d.pattern != MaskPattern::NoMask);
        }
        let s = noised_sample(x0, &d.noise, d.t, &d.mask)?;
        let text = caption_tokens(&entry.caption, cfg.text.max_len, cfg.model.text_dim)?;
        let cond = StditCond { timesteps: &s.t, fps: entry.fps, text: &text };
        let xv = g.constant(s.x_t.clone());
        let pred = model.g_forward(&mut g, &b, xv, &cond)?;
        losses.push(g_masked_mse(&mut g, pred, &s.v, &s.loss_frames)?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.add(total, l)?;
    }
    let loss = g.scale(total, 1.0 / losses.len() as f64)?;
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    let mut grads = g.backward(loss)?;
    let grads = model.params.collect_grads(&b, &mut grads);
    opt.cfg.lr = stage.lr;
    opt.step(&mut model.params, &grads)?;
    let report = StepReport {
        stage: *id,
        step,
        global_step: state.global_step,
        loss: value,
        bucket: bucket.to_string(),
        batch: batch.ids.len(),
        masked,
        eligible,
    };
    state.step = step + 1;
    state.global_step += 1;
    Ok(report)
}

pub const LOSS_COLUMNS: [&str; 8] = ["stage", "step", "global_step", "loss", "bucket", "batch", "masked", "eligible"];

pub fn loss_record(r: &StepReport) -> [String; 8] {
    [
        r.stage.to_string(),
        r.step.to_string(),
        r.global_step.to_string(),
        r.loss.to_string(),
        r.bucket.clone(),
        r.batch.to_string(),
        r.masked.to_string(),
        r.eligible.to_string(),
    ]
}

/// Trailing mean over `window` values ending at each index.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

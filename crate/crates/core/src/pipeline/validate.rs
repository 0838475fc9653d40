use rayon::prelude::*;

use super::config::KitConfig;
use super::data::{caption_tokens, LatentStore};
use super::synth::{DatasetEntry, Split};
use crate::bucket::RESOLUTIONS;
use crate::codec::CausalCodec;
use crate::conditioning::FrameMask;
use crate::error::{Error, Result};
use crate::flow::{noise_like, validation_loss};
use crate::numerics::Tensor;
use crate::rng;
use crate::stdit::{Stdit, StditCond};

/// Grid lengths as frame counts; seconds map to frames at 4 fps.
pub const GRID_LENGTHS: [(&str, usize); 5] = [("image", 1), ("2s", 8), ("4s", 16), ("8s", 32), ("16s", 64)];

/// Root of the fixed validation noise; independent of the config seed.
const VALIDATION_NOISE: &str = "validation.noise";

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub length: &'static str,
    pub frames: usize,
    pub resolution: &'static str,
    pub pixels: usize,
    pub clips: usize,
    /// `None` when no held-out clip fits the cell.
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationGrid {
    pub cells: Vec<GridCell>,
}

impl ValidationGrid {
    /// Sum over evaluated cells.
    pub fn total(&self) -> f64 {
        self.cells.iter().filter_map(|c| c.loss).sum()
    }

    pub fn cell(&self, length: &str, resolution: &str) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.length == length && c.resolution == resolution)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["length", "frames", "resolution", "pixels", "clips", "loss"])?;
        for c in &self.cells {
            w.write_record([
                c.length.to_string(),
                c.frames.to_string(),
                c.resolution.to_string(),
                c.pixels.to_string(),
                c.clips.to_string(),
                c.loss.map_or_else(String::new, |l| l.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<grid>", e))
    }
}

/// Held-out clips evaluated in a cell: the first `max` (by id) that are at
/// least `pixels` on the short side and `frames` long.
pub fn cell_clips<'e>(entries: &'e [DatasetEntry], pixels: usize, frames: usize, max: usize) -> Vec<&'e DatasetEntry> {
    let mut v: Vec<&DatasetEntry> = entries
        .iter()
        .filter(|e| e.split == Split::Val && e.width.min(e.height) >= pixels && e.frames >= frames)
        .collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v.truncate(max);
    v
}

/// Fixed noise for a clip in a cell.
pub fn cell_noise(id: &str, pixels: usize, frames: usize, draw: usize, shape: &[usize]) -> Tensor<f32> {
    let mut r = rng::stream(rng::label(VALIDATION_NOISE), &[rng::label(id), pixels as u64, frames as u64, draw as u64]);
    noise_like(&mut r, shape)
}

/// Flow loss over the fixed validation timesteps for every grid cell,
/// averaged over the cell's held-out clips. Cells run in parallel.
pub fn evaluate_grid(model: &Stdit, codec: &CausalCodec, entries: &[DatasetEntry], cfg: &KitConfig) -> Result<ValidationGrid> {
    if !entries.iter().any(|e| e.split == Split::Val) {
        return Err(Error::Precondition("no held-out clips for validation".into()));
    }
    let store = LatentStore::new(codec, entries, 0);
    let specs: Vec<(&'static str, usize, &'static str, usize)> = GRID_LENGTHS
        .iter()
        .flat_map(|&(l, f)| RESOLUTIONS.iter().map(move |&(r, p)| (l, f, r, p)))
        .collect();
    let cells = specs
        .par_iter()
        .map(|&(length, frames, resolution, pixels)| {
            let clips = cell_clips(entries, pixels, frames, cfg.validate.max_clips_per_cell);
            let mut total = 0.0;
            for e in &clips {
                let x0 = store.latent(&e.id, pixels, pixels, frames, true)?;
                let text = caption_tokens(&e.caption, cfg.text.max_len, cfg.model.text_dim)?;
                let fps = e.fps;
                let predict = |x: &Tensor<f32>, t: &[f64]| model.forward(x, &StditCond { timesteps: t, fps, text: &text });
                let draws = cfg.validate.noise_draws(x0.len());
                for d in 0..draws {
                    let x1 = cell_noise(&e.id, pixels, frames, d, x0.shape());
                    total += validation_loss(&predict, &x0, &x1, &FrameMask::none(x0.shape()[0]))? / draws as f64;
                }
            }
            Ok(GridCell {
                length,
                frames,
                resolution,
                pixels,
                clips: clips.len(),
                loss: (!clips.is_empty()).then(|| total / clips.len() as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationGrid { cells })
}

/// Expected validation loss of the all-zero predictor in a cell, and the
/// standard error of its Monte-Carlo estimate: per element the loss is
/// `(x1 - x0)^2` with mean `1 + x0^2` and variance `2 + 4 x0^2`.
pub fn zero_model_reference(codec: &CausalCodec, entries: &[DatasetEntry], cfg: &KitConfig, pixels: usize, frames: usize) -> Result<Option<(f64, f64)>> {
    let store = LatentStore::new(codec, entries, 0);
    let clips = cell_clips(entries, pixels, frames, cfg.validate.max_clips_per_cell);
    if clips.is_empty() {
        return Ok(None);
    }
    let (mut mean, mut var) = (0.0, 0.0);
    for e in &clips {
        let x0 = store.latent(&e.id, pixels, pixels, frames, true)?;
        let n = x0.len() as f64;
        let draws = cfg.validate.noise_draws(x0.len()) as f64;
        for &a in x0.data() {
            let a2 = (a as f64).powi(2);
            mean += (1.0 + a2) / n;
            var += (2.0 + 4.0 * a2) / (n * n * draws);
        }
    }
    let k = clips.len() as f64;
    Ok(Some((mean / k, var.sqrt() / k)))
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bucket::{resolution_px, BucketSection, BucketTable};
use crate::codec::{CodecConfig, CodecSchedule};
use crate::dataprep::PrepConfig;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::stdit::StditConfig;

use super::synth::SynthSpec;

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "OPEN_SORA_KIT_SEED";

/// One training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Allowed bucket resolutions (labels or pixels); empty allows all.
    pub resolutions: Vec<String>,
    /// Allowed bucket frame counts; empty allows all.
    pub frames: Vec<usize>,
    /// Probability that a video sample gets a conditioning mask.
    pub mask_prob: f64,
    pub steps: usize,
    pub lr: f64,
    /// Bucket rows for this stage; empty uses `[buckets]`.
    pub buckets: Vec<String>,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            resolutions: Vec::new(),
            frames: Vec::new(),
            mask_prob: 0.25,
            steps: 100,
            lr: 1e-3,
            buckets: Vec::new(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self, id: u32) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config(format!("stage {}: steps must be > 0", id)));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("stage {}: mask_prob outside [0, 1]", id)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("stage {}: lr must be positive", id)));
        }
        Ok(())
    }

    /// The stage's bucket table: its own rows (or `fallback`), restricted to
    /// the allowed resolutions and frame counts.
    pub fn table(&self, fallback: &BucketSection) -> Result<BucketTable> {
        let rows = if self.buckets.is_empty() { &fallback.rows } else { &self.buckets };
        let all = BucketTable::from_rows(rows)?;
        let res = self.resolutions.iter().map(|r| resolution_px(r)).collect::<Result<Vec<_>>>()?;
        let kept: Vec<_> = all
            .buckets
            .into_iter()
            .filter(|b| res.is_empty() || res.contains(&b.resolution))
            .filter(|b| self.frames.is_empty() || self.frames.contains(&b.frames))
            .collect();
        if kept.is_empty() {
            return Err(Error::Config("stage allows no bucket".into()));
        }
        BucketTable::new(kept)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    /// Caption tokens kept (whitespace split).
    pub max_len: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { max_len: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateConfig {
    /// Held-out clips evaluated per grid cell.
    pub max_clips_per_cell: usize,
    /// Tiny cells repeat the noise draw until each clip contributes at
    /// least this many noise scalars (capped at [`MAX_NOISE_DRAWS`] draws).
    pub min_noise_elements: usize,
}

pub const MAX_NOISE_DRAWS: usize = 64;

impl ValidateConfig {
    /// Noise draws per clip for a latent of `elements` scalars.
    pub fn noise_draws(&self, elements: usize) -> usize {
        self.min_noise_elements.div_ceil(elements.max(1)).clamp(1, MAX_NOISE_DRAWS)
    }
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { max_clips_per_cell: 3, min_noise_elements: 256 }
    }
}

/// Everything the CLI reads from its TOML config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KitConfig {
    /// Root seed for training draws (bucketing, masks, timesteps, noise).
    pub seed: u64,
    pub model: StditConfig,
    pub codec: CodecConfig,
    pub codec_schedule: CodecSchedule,
    pub flow: FlowConfig,
    pub text: TextConfig,
    pub prep: PrepConfig,
    pub synth: SynthSpec,
    pub validate: ValidateConfig,
    pub buckets: BucketSection,
    /// Keyed by stage number.
    pub stages: BTreeMap<String, StageConfig>,
}

fn toy_stages() -> BTreeMap<String, StageConfig> {
    let stage = |res: &[&str], mask_prob: f64, steps: usize| StageConfig {
        resolutions: res.iter().map(|s| s.to_string()).collect(),
        mask_prob,
        steps,
        lr: 2e-3,
        ..Default::default()
    };
    BTreeMap::from([
        ("1".to_string(), stage(&["144p", "240p"], 0.1, 400)),
        ("2".to_string(), stage(&["144p", "240p", "360p", "480p"], 0.25, 300)),
        ("3".to_string(), stage(&[], 0.25, 300)),
    ])
}

impl Default for KitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: StditConfig::default(),
            codec: CodecConfig::default(),
            codec_schedule: CodecSchedule::default(),
            flow: FlowConfig::default(),
            text: TextConfig::default(),
            prep: PrepConfig::default(),
            synth: SynthSpec::default(),
            validate: ValidateConfig::default(),
            buckets: BucketSection {
                rows: [
                    "144p, 1, 1:1, 1.0, 2",
                    "144p, 8, 1:1, 1.0, 4",
                    "240p, 1, 1:1, 0.3, 4",
                    "240p, 8, 1:1, 1.0, 4",
                    "240p, 16, 1:1, 1.0, 4",
                    "360p, 16, 1:1, 0.8, 2",
                    "480p, 16, 1:1, 0.8, 2",
                    "480p, 32, 1:1, 0.7, 1",
                    "720p, 32, 1:1, 0.6, 1",
                    "720p, 64, 1:1, 0.6, 1",
                ]
                .map(String::from)
                .to_vec(),
            },
            stages: toy_stages(),
        }
    }
}

impl KitConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: KitConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or the defaults when `None`) and applies the seed
    /// override from [`SEED_ENV`].
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => Self::default(),
        };
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{} must be an unsigned integer, got `{}`", SEED_ENV, s)))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.codec.validate()?;
        self.flow.validate()?;
        self.prep.validate()?;
        self.synth.validate()?;
        if self.model.in_channels != self.codec.latent_channels {
            return Err(Error::Config(format!(
                "model in_channels {} must equal codec latent_channels {}",
                self.model.in_channels, self.codec.latent_channels
            )));
        }
        if self.text.max_len == 0 {
            return Err(Error::Config("text max_len must be >= 1".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        for (id, s) in self.stages()? {
            s.validate(id)?;
            s.table(&self.buckets)?;
        }
        Ok(())
    }

    /// Stages in ascending order.
    pub fn stages(&self) -> Result<Vec<(u32, StageConfig)>> {
        let mut out = self
            .stages
            .iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|id| (id, v.clone()))
                    .map_err(|_| Error::Config(format!("stage key `{}` is not a number", k)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }
}

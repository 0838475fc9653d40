use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{vten, Tensor};

/// Pixel video `[frames, height, width, channels]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor(Tensor<f32>);

impl VideoTensor {
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        if t.ndim() != 4 {
            return Err(Error::Geometry(format!("video must be rank 4, got {:?}", t.shape())));
        }
        if t.shape()[0] == 0 || t.shape()[1] == 0 || t.shape()[2] == 0 || t.shape()[3] == 0 {
            return Err(Error::Geometry(format!("empty video {:?}", t.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {} outside [0, 1]", v)));
        }
        Ok(Self(t))
    }

    /// Builds a video from per-pixel values, clamping into `[0, 1]`.
    pub fn from_fn(frames: usize, height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let (hw, wc) = (height * width * channels, width * channels);
        let t = Tensor::from_fn(&[frames, height, width, channels], |i| {
            let (fr, r) = (i / hw, i % hw);
            let (y, r) = (r / wc, r % wc);
            f(fr, y, r / channels, r % channels).clamp(0.0, 1.0)
        });
        Self(t)
    }

    pub fn filled(frames: usize, height: usize, width: usize, color: &[f64]) -> Self {
        Self::from_fn(frames, height, width, color.len(), |_, _, _, c| color[c])
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn pixel(&self, f: usize, y: usize, x: usize, c: usize) -> f32 {
        let (h, w, ch) = (self.height(), self.width(), self.channels());
        self.0.data()[((f * h + y) * w + x) * ch + c]
    }

    pub fn frame_data(&self, f: usize) -> &[f32] {
        let n = self.height() * self.width() * self.channels();
        &self.0.data()[f * n..(f + 1) * n]
    }

    /// Frames `start..start+len` as a new clip.
    pub fn frames_range(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self(self.0.slice0(start, len)?))
    }

    pub fn concat(parts: &[Self]) -> Result<Self> {
        let refs: Vec<&Tensor<f32>> = parts.iter().map(|p| &p.0).collect();
        Ok(Self(Tensor::concat0(&refs)?))
    }

    /// Rec. 601 luma per pixel of frame `f`.
    pub fn luma(&self, f: usize) -> Vec<f64> {
        let c = self.channels();
        self.frame_data(f)
            .chunks(c)
            .map(|px| {
                if c >= 3 {
                    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
                } else {
                    px[0] as f64
                }
            })
            .collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let t = vten::read(path)?;
        Self::new(t).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        vten::write(path, &self.0)
    }
}

/// Per-channel latent statistics used for normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::dim("channel_stats", "mean/std length mismatch"));
        }
        for (c, (&m, &s)) in self.mean.iter().zip(&self.std).enumerate() {
            if !m.is_finite() || !s.is_finite() || s <= 0.0 {
                return Err(Error::DegenerateStats { channel: c, std: s });
            }
        }
        Ok(())
    }

    /// Population mean/std per channel over the last axis of every latent.
    pub fn fit<'a>(latents: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for t in latents {
            let c = *t.shape().last().ok_or_else(|| Error::dim("channel_stats", "scalar latent"))?;
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(Error::dim("channel_stats", format!("{} vs {} channels", sum.len(), c)));
            }
            for row in t.data().chunks(c) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += v as f64 * v as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Precondition("no latents to fit statistics on".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt())
            .collect();
        let stats = Self { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    /// Sidecar text: `channels N`, `mean ...`, `std ...`.
    pub fn to_sidecar(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{:e}", x)).collect::<Vec<_>>().join(" ");
        format!("channels {}\nmean {}\nstd {}\n", self.channels(), join(&self.mean), join(&self.std))
    }

    pub fn from_sidecar(text: &str) -> std::result::Result<Self, String> {
        let mut channels = None;
        let mut mean = None;
        let mut std = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, rest) = line.split_once(' ').ok_or_else(|| format!("bad line {:?}", line))?;
            let nums = || -> std::result::Result<Vec<f64>, String> {
                rest.split_whitespace().map(|s| s.parse::<f64>().map_err(|e| e.to_string())).collect()
            };
            match key {
                "channels" => channels = Some(rest.trim().parse::<usize>().map_err(|e| e.to_string())?),
                "mean" => mean = Some(nums()?),
                "std" => std = Some(nums()?),
                other => return Err(format!("unknown key {:?}", other)),
            }
        }
        let (c, mean, std) = (
            channels.ok_or("missing channels")?,
            mean.ok_or("missing mean")?,
            std.ok_or("missing std")?,
        );
        if mean.len() != c || std.len() != c {
            return Err(format!("expected {} channels", c));
        }
        let s = Self { mean, std };
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

/// Latent video `[latent_frames, h/8, w/8, channels]` plus channel statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    pub latents: Tensor<f32>,
    pub stats: ChannelStats,
}

impl LatentVideo {
    pub fn new(latents: Tensor<f32>, stats: ChannelStats) -> Result<Self> {
        if latents.ndim() != 4 || latents.shape()[3] != stats.channels() {
            return Err(Error::dim(
                "latent_video",
                format!("latents {:?} with {} stat channels", latents.shape(), stats.channels()),
            ));
        }
        stats.validate()?;
        Ok(Self { latents, stats })
    }

    pub fn frames(&self) -> usize {
        self.latents.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.latents.shape()[3]
    }

    /// Writes `<path>` as VTEN and `<path>.stats` as the text sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        vten::write(path, &self.latents)?;
        let side = sidecar_path(path);
        fs::write(&side, self.stats.to_sidecar()).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let latents = vten::read(path)?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let stats = ChannelStats::from_sidecar(&text).map_err(|d| Error::format(&side, d))?;
        Self::new(latents, stats)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stats");
    s.into()
}

/// Latent frame count for `frames` input frames: `1 + ceil((frames - 1) / 4)`.
pub fn latent_frames(frames: usize) -> usize {
    assert!(frames >= 1, "need at least one frame");
    1 + (frames - 1).div_ceil(4)
}

/// Cuts a video into consecutive 17-frame clips; the last may be shorter.
pub fn segment_clips(v: &VideoTensor) -> Result<Vec<VideoTensor>> {
    const CLIP: usize = 17;
    (0..v.frames())
        .step_by(CLIP)
        .map(|s| v.frames_range(s, CLIP.min(v.frames() - s)))
        .collect()
}

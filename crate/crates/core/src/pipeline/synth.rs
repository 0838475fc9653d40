//! Moving-shape clips with programmatic captions and exact motion labels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codec::VideoTensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Square frame sides in pixels, cycled over clips (multiples of 8).
    pub sizes: Vec<usize>,
    /// Clip lengths in frames, cycled over clips.
    pub lengths: Vec<usize>,
    pub fps: f64,
    /// Shape speed in px/frame.
    pub speed: f64,
    /// Every `val_every`-th clip is held out for validation (0 = none).
    pub val_every: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 48],
            lengths: vec![1, 9, 17, 33, 65],
            fps: 4.0,
            speed: 2.0,
            val_every: 5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s == 0 || s % 8 != 0) {
            return Err(Error::Config("synth sizes must be non-empty multiples of 8".into()));
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::Config("synth lengths must be non-empty and positive".into()));
        }
        if !(self.fps > 0.0 && self.speed.is_finite() && self.speed >= 0.0) {
            return Err(Error::Config("synth fps must be positive and speed finite".into()));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Motion {
    Right,
    Left,
    Up,
    Down,
    Rotating,
    Still,
}

impl Motion {
    pub const ALL: [Motion; 6] = [Motion::Right, Motion::Left, Motion::Up, Motion::Down, Motion::Rotating, Motion::Still];

    pub fn phrase(&self) -> &'static str {
        match self {
            Motion::Right => "moving right",
            Motion::Left => "moving left",
            Motion::Up => "moving up",
            Motion::Down => "moving down",
            Motion::Rotating => "rotating",
            Motion::Still => "standing still",
        }
    }

    /// Content velocity direction `(dx, dy)`, y pointing down.
    fn direction(&self) -> (f64, f64) {
        match self {
            Motion::Right => (1.0, 0.0),
            Motion::Left => (-1.0, 0.0),
            Motion::Up => (0.0, -1.0),
            Motion::Down => (0.0, 1.0),
            Motion::Rotating | Motion::Still => (0.0, 0.0),
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

const COLORS: [(&str, [f64; 3]); 4] = [
    ("red", [0.85, 0.15, 0.15]),
    ("green", [0.2, 0.75, 0.25]),
    ("blue", [0.2, 0.3, 0.9]),
    ("yellow", [0.9, 0.85, 0.2]),
];
const BACKGROUNDS: [[f64; 3]; 3] = [[0.93, 0.93, 0.9], [0.2, 0.2, 0.22], [0.85, 0.8, 0.7]];

#[derive(Clone, Debug)]
pub struct SynthClip {
    pub id: String,
    pub caption: String,
    pub motion: Motion,
    pub split: Split,
    pub fps: f64,
    pub video: VideoTensor,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

fn wrap(d: f64, period: f64) -> f64 {
    (d + period / 2.0).rem_euclid(period) - period / 2.0
}

/// Renders one shape clip. The shape carries a shading pattern that moves
/// with it, so its interior is trackable; it wraps around the frame edges.
pub fn render_shape(side: usize, frames: usize, square: bool, color: [f64; 3], bg: [f64; 3], motion: Motion, speed: f64, start: (f64, f64)) -> VideoTensor {
    let n = side as f64;
    let radius = 0.3 * n;
    let (dx, dy) = motion.direction();
    VideoTensor::from_fn(frames, side, side, 3, |f, y, x, c| {
        let t = f as f64;
        let cx = start.0 + dx * speed * t;
        let cy = start.1 + dy * speed * t;
        let (mut lx, mut ly) = (wrap(x as f64 + 0.5 - cx, n), wrap(y as f64 + 0.5 - cy, n));
        if motion == Motion::Rotating {
            let a = -0.2 * t;
            (lx, ly) = (lx * a.cos() - ly * a.sin(), lx * a.sin() + ly * a.cos());
        }
        let inside = if square {
            lx.abs() <= radius && ly.abs() <= radius
        } else {
            lx * lx + ly * ly <= radius * radius
        };
        if inside {
            let shade = 0.65 + 0.35 * (0.5 + 0.5 * (0.9 * lx).sin() * (0.7 * ly).cos());
            color[c] * shade
        } else {
            bg[c]
        }
    })
}

/// `n` clips cycling through sizes, lengths and motions; everything else
/// (colour, shape, background, start position) is drawn from `seed`.
pub fn make_synthetic(n: usize, spec: &SynthSpec, seed: u64) -> Result<Vec<SynthClip>> {
    if n == 0 {
        return Err(Error::Precondition("synthetic dataset needs n >= 1".into()));
    }
    spec.validate()?;
    Ok((0..n)
        .map(|i| {
            let mut r = rng::stream(seed, &[rng::label("synth.clip"), i as u64]);
            let side = spec.sizes[i % spec.sizes.len()];
            let frames = spec.lengths[(i / spec.sizes.len()) % spec.lengths.len()];
            let motion = Motion::ALL[i % Motion::ALL.len()];
            let (name, color) = COLORS[r.random_range(0..COLORS.len())];
            let square = r.random_bool(0.5);
            let bg = BACKGROUNDS[r.random_range(0..BACKGROUNDS.len())];
            let start = (r.random_range(0.0..side as f64), r.random_range(0.0..side as f64));
            let video = render_shape(side, frames, square, color, bg, motion, spec.speed, start);
            let caption = format!("{} {} {}", name, if square { "square" } else { "disk" }, motion.phrase());
            let split = if spec.val_every > 0 && i % spec.val_every == spec.val_every - 1 {
                Split::Val
            } else {
                Split::Train
            };
            SynthClip {
                id: format!("synth-{:05}", i),
                caption,
                motion,
                split,
                fps: spec.fps,
                video,
            }
        })
        .collect())
}

pub const DATASET_COLUMNS: [&str; 9] = ["clip_id", "path", "width", "height", "frames", "fps", "caption", "motion", "split"];

/// Writes `<id>.vten`, `<id>.txt` (caption) and `manifest.csv` into `dir`.
pub fn write_dataset(clips: &[SynthClip], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mp = dir.join("manifest.csv");
    let file = fs::File::create(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(DATASET_COLUMNS)?;
    for c in clips {
        let name = format!("{}.vten", c.id);
        c.video.write(dir.join(&name))?;
        let tp = dir.join(format!("{}.txt", c.id));
        fs::write(&tp, format!("{}\n", c.caption)).map_err(|e| Error::io(&tp, e))?;
        w.write_record([
            c.id.clone(),
            name,
            c.video.width().to_string(),
            c.video.height().to_string(),
            c.video.frames().to_string(),
            c.fps.to_string(),
            c.caption.clone(),
            c.motion.phrase().to_string(),
            c.split.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&mp, e))
}

/// One row of a dataset manifest (synthetic or prep output).
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub caption: String,
    pub split: Split,
}

/// Reads `dir/manifest.csv`. Needs columns clip_id, path, width, height,
/// frames, fps and caption; rows with `keep=false` are skipped, and a
/// `split` column marks held-out clips (default train).
pub fn read_dataset(dir: &Path) -> Result<Vec<DatasetEntry>> {
    let mp = dir.join("manifest.csv");
    let mut rd = csv::Reader::from_path(&mp)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::format(&mp, format!("missing column `{}`", name)));
    let (id, path, width, height, frames, fps, caption) =
        (need("clip_id")?, need("path")?, need("width")?, need("height")?, need("frames")?, need("fps")?, need("caption")?);
    let (keep, split) = (col("keep"), col("split"));
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::format(&mp, format!("row {}: bad {}", row + 1, what));
        if keep.is_some_and(|k| &rec[k] == "false") {
            continue;
        }
        let num = |i: usize, what: &str| rec[i].parse::<usize>().map_err(|_| bad(what));
        out.push(DatasetEntry {
            id: rec[id].to_string(),
            path: dir.join(&rec[path]),
            width: num(width, "width")?,
            height: num(height, "height")?,
            frames: num(frames, "frames")?,
            fps: rec[fps].parse().map_err(|_| bad("fps"))?,
            caption: rec[caption].to_string(),
            split: match split.map(|s| &rec[s]) {
                Some("val") => Split::Val,
                Some("train") | Some("") | None => Split::Train,
                Some(_) => return Err(bad("split")),
            },
        });
    }
    Ok(out)
}

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{camera_motion, mean_flow_magnitude, optical_flow, MotionThresholds};
use super::scenes::{detect_scenes, scene_ranges};
use super::scores::{aesthetic_score, ocr_area_ratio, passes_ocr, FrameScorer, ReferenceAesthetic, ReferenceTextDetector, TextDetector};
use crate::codec::VideoTensor;
use crate::conditioning::{format_caption, CameraMotion, ScoredCaption};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Thresholds for cutting, filtering and labelling. Defaults are toy-scale
/// settings, not tuned values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    /// Cut when a frame difference exceeds this multiple of the rolling median.
    pub scene_threshold: f64,
    /// Scenes shorter than this are skipped.
    pub min_clip_frames: usize,
    pub min_aesthetic: f64,
    /// Clips moving less than this (px/frame) are dropped.
    pub min_flow: f64,
    /// Clips with a larger text-area ratio are dropped.
    pub max_ocr_ratio: f64,
    pub motion: MotionThresholds,
    /// Frame rate assigned to inputs that carry none.
    pub fps: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            scene_threshold: 3.0,
            min_clip_frames: 2,
            min_aesthetic: 0.0,
            min_flow: 0.3,
            max_ocr_ratio: 0.3,
            motion: MotionThresholds::default(),
            fps: 4.0,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("prep: {}", m)));
        if self.scene_threshold.is_nan() || self.scene_threshold <= 0.0 {
            return bad("scene_threshold must be positive");
        }
        if self.min_clip_frames < 2 {
            return bad("min_clip_frames must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.max_ocr_ratio) {
            return bad("max_ocr_ratio outside [0, 1]");
        }
        if !(self.min_aesthetic.is_finite() && self.min_flow.is_finite()) {
            return bad("score thresholds must be finite");
        }
        if !(self.motion.translation > 0.0 && self.motion.divergence > 0.0) {
            return bad("motion thresholds must be positive");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        Ok(())
    }
}

/// Pluggable scorers; the default uses the heuristic references.
pub struct Scorers {
    pub aesthetic: Box<dyn FrameScorer>,
    pub text: Box<dyn TextDetector>,
}

impl Default for Scorers {
    fn default() -> Self {
        Self {
            aesthetic: Box::new(ReferenceAesthetic),
            text: Box::new(ReferenceTextDetector::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub source_id: String,
    pub start: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Caption with scores and camera motion appended.
    pub caption: String,
    pub aesthetic: f64,
    pub flow: f64,
    pub ocr_ratio: f64,
    pub camera: CameraMotion,
    pub keep: bool,
}

impl ClipRecord {
    /// Path of the clip tensor relative to the output directory.
    pub fn path(&self) -> String {
        format!("clips/{}.vten", self.clip_id)
    }
}

/// Where a source video comes from.
#[derive(Clone, Debug)]
pub enum Source {
    Memory(VideoTensor),
    /// A VTEN video file.
    Vten(PathBuf),
    /// A directory of PNG frames, read in file-name order.
    Frames(PathBuf),
}

#[derive(Clone, Debug)]
pub struct PrepItem {
    pub id: String,
    pub caption: String,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemError {
    pub source: String,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct PrepOutput {
    /// Sorted by clip id.
    pub records: Vec<ClipRecord>,
    /// Clip pixels, parallel to `records`.
    pub clips: Vec<VideoTensor>,
    pub errors: Vec<ItemError>,
    /// Scenes shorter than `min_clip_frames`.
    pub skipped: usize,
}

fn round_to(x: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (x * k).round() / k
}

/// Cuts one video into scenes and scores, labels and filters each clip.
/// Depends only on its arguments.
pub fn process_video(
    id: &str,
    caption: &str,
    v: &VideoTensor,
    cfg: &PrepConfig,
    scorers: &Scorers,
) -> Result<(Vec<(ClipRecord, VideoTensor)>, usize)> {
    let cuts = if v.frames() >= 2 {
        detect_scenes(v, cfg.scene_threshold)?
    } else {
        Vec::new()
    };
    let mut out = Vec::new();
    let mut skipped = 0;
    for (i, (start, len)) in scene_ranges(v.frames(), &cuts).into_iter().enumerate() {
        if len < cfg.min_clip_frames {
            skipped += 1;
            continue;
        }
        let clip = v.frames_range(start, len)?;
        let flows = optical_flow(&clip)?;
        let aesthetic = round_to(aesthetic_score(&clip, scorers.aesthetic.as_ref()), 2);
        let flow = round_to(mean_flow_magnitude(&flows), 2);
        let ocr_ratio = round_to(ocr_area_ratio(&clip, scorers.text.as_ref()), 3);
        let camera = camera_motion(&flows, &cfg.motion)?;
        let scored = ScoredCaption::new(caption, aesthetic, flow, Some(camera))?;
        let keep = aesthetic >= cfg.min_aesthetic && flow >= cfg.min_flow && passes_ocr(ocr_ratio, cfg.max_ocr_ratio);
        let rec = ClipRecord {
            clip_id: format!("{}-{:03}", id, i),
            source_id: id.to_string(),
            start,
            frames: len,
            width: clip.width(),
            height: clip.height(),
            fps: cfg.fps,
            caption: format_caption(&scored),
            aesthetic,
            flow,
            ocr_ratio,
            camera,
            keep,
        };
        out.push((rec, clip));
    }
    Ok((out, skipped))
}

fn load_frames(dir: &Path) -> Result<VideoTensor> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format(dir, "no PNG frames"));
    }
    let mut size = None;
    let mut data = Vec::new();
    for f in &files {
        let img = image::open(f).map_err(|e| Error::format(f, e.to_string()))?.to_rgb8();
        let dims = img.dimensions();
        if *size.get_or_insert(dims) != dims {
            return Err(Error::format(f, format!("frame size {:?} differs from {:?}", dims, size)));
        }
        data.extend(img.as_raw().iter().map(|&b| b as f32 / 255.0));
    }
    let (w, h) = size.expect("at least one frame");
    VideoTensor::new(Tensor::new(vec![files.len(), h as usize, w as usize, 3], data)?)
}

impl Source {
    pub fn load(&self) -> Result<VideoTensor> {
        match self {
            Source::Memory(v) => Ok(v.clone()),
            Source::Vten(p) => VideoTensor::read(p),
            Source::Frames(d) => load_frames(d),
        }
    }
}

/// Runs every item on the worker pool. Failures are recorded per item and
/// the rest of the batch continues; the result is sorted by clip id, so it
/// does not depend on input order.
pub fn run_pipeline(items: &[PrepItem], cfg: &PrepConfig, scorers: &Scorers) -> Result<PrepOutput> {
    cfg.validate()?;
    let mut ids: Vec<&str> = items.iter().map(|i| i.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Argument(format!("duplicate source id `{}`", w[0])));
    }
    let results: Vec<(String, Result<(Vec<(ClipRecord, VideoTensor)>, usize)>)> = items
        .par_iter()
        .map(|item| {
            let r = item.source.load().and_then(|v| process_video(&item.id, &item.caption, &v, cfg, scorers));
            (item.id.clone(), r)
        })
        .collect();
    let mut out = PrepOutput::default();
    let mut pairs = Vec::new();
    for (id, r) in results {
        match r {
            Ok((clips, skipped)) => {
                pairs.extend(clips);
                out.skipped += skipped;
            }
            Err(e) => out.errors.push(ItemError {
                source: id,
                message: e.to_string(),
            }),
        }
    }
    pairs.sort_by(|a, b| a.0.clip_id.cmp(&b.0.clip_id));
    out.errors.sort_by(|a, b| a.source.cmp(&b.source));
    (out.records, out.clips) = pairs.into_iter().unzip();
    Ok(out)
}

/// Items for every `*.vten` file and every subdirectory of PNG frames in
/// `dir`. A sibling `<stem>.txt` supplies the caption; otherwise the stem
/// is used.
pub fn scan_input_dir(dir: &Path) -> Result<Vec<PrepItem>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    let mut items = Vec::new();
    for p in paths {
        let source = if p.is_dir() {
            Source::Frames(p.clone())
        } else if p.extension().is_some_and(|x| x == "vten") {
            Source::Vten(p.clone())
        } else {
            continue;
        };
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let caption = fs::read_to_string(p.with_extension("txt"))
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|_| id.clone());
        items.push(PrepItem { id, caption, source });
    }
    Ok(items)
}

pub const MANIFEST_COLUMNS: [&str; 12] = [
    "clip_id", "path", "width", "height", "frames", "fps", "caption", "aes", "flow", "ocr_ratio", "camera_motion", "keep",
];

pub fn write_manifest<W: std::io::Write>(records: &[ClipRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_COLUMNS)?;
    for r in records {
        w.write_record([
            r.clip_id.clone(),
            r.path(),
            r.width.to_string(),
            r.height.to_string(),
            r.frames.to_string(),
            r.fps.to_string(),
            r.caption.clone(),
            r.aesthetic.to_string(),
            r.flow.to_string(),
            r.ocr_ratio.to_string(),
            r.camera.to_string(),
            r.keep.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub metric: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub all: usize,
    pub kept: usize,
}

fn bins(metric: &'static str, edges: &[f64]) -> Vec<HistogramBin> {
    edges
        .windows(2)
        .map(|w| HistogramBin { metric, lo: w[0], hi: w[1], all: 0, kept: 0 })
        .collect()
}

fn linear_edges(lo: f64, step: f64, n: usize, overflow: bool) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=n).map(|i| lo + step * i as f64).collect();
    if overflow {
        e.push(f64::INFINITY);
    }
    e
}

/// Distribution histograms over duration (s), resolution (short side, px)
/// and the three scores. Bins are fixed, so an empty manifest gives zeros.
pub fn histograms(records: &[ClipRecord]) -> Vec<HistogramBin> {
    let mut metrics = [
        ("duration_s", bins("duration_s", &linear_edges(0.0, 1.0, 16, true))),
        ("short_side_px", bins("short_side_px", &[0.0, 8.0, 16.0, 24.0, 32.0, 48.0, f64::INFINITY])),
        ("aes", bins("aes", &linear_edges(0.0, 1.0, 10, false))),
        ("flow", bins("flow", &linear_edges(0.0, 0.5, 16, true))),
        ("ocr_ratio", bins("ocr_ratio", &linear_edges(0.0, 0.1, 10, false))),
    ];
    for r in records {
        let values = [
            r.frames as f64 / r.fps,
            r.width.min(r.height) as f64,
            r.aesthetic,
            r.flow,
            r.ocr_ratio,
        ];
        for ((name, hist), v) in metrics.iter_mut().zip(values) {
            // short sides fall in (lo, hi]; the others in [lo, hi) with the
            // last bin closed
            let n = hist.len();
            let idx = hist.iter().position(|b| {
                if *name == "short_side_px" {
                    v > b.lo && v <= b.hi
                } else {
                    v >= b.lo && v < b.hi
                }
            });
            let idx = idx.unwrap_or(if v <= hist[0].lo { 0 } else { n - 1 });
            hist[idx].all += 1;
            if r.keep {
                hist[idx].kept += 1;
            }
        }
    }
    metrics.into_iter().flat_map(|(_, h)| h).collect()
}

pub fn write_stats<W: std::io::Write>(records: &[ClipRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "bin_lo", "bin_hi", "clips", "kept"])?;
    for b in histograms(records) {
        w.write_record([b.metric.to_string(), b.lo.to_string(), b.hi.to_string(), b.all.to_string(), b.kept.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<stats>", e))
}

/// Writes `manifest.csv`, `stats.csv`, `errors.csv` and the clip tensors
/// under `clips/`.
pub fn write_outputs(out: &PrepOutput, dir: &Path) -> Result<()> {
    let clips = dir.join("clips");
    fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    for (r, v) in out.records.iter().zip(&out.clips) {
        v.write(dir.join(r.path()))?;
    }
    let create = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map_err(|e| Error::io(p, e))
    };
    write_manifest(&out.records, create("manifest.csv")?)?;
    write_stats(&out.records, create("stats.csv")?)?;
    let mut w = csv::Writer::from_writer(create("errors.csv")?);
    w.write_record(["source", "error"])?;
    for e in &out.errors {
        w.write_record([&e.source, &e.message])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("errors.csv"), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::synthetic::{textured_clip, with_text_band, PlantedMotion, Texture};

    fn item(id: &str, v: VideoTensor) -> PrepItem {
        PrepItem { id: id.into(), caption: format!("clip {}", id), source: Source::Memory(v) }
    }

    fn corpus() -> Vec<PrepItem> {
        vec![
            item("pan", textured_clip(&Texture::new(1), PlantedMotion::Pan(2.0, 0.0), 8, 32)),
            item("still", textured_clip(&Texture::new(2), PlantedMotion::Static, 8, 32)),
            item("text", with_text_band(&textured_clip(&Texture::new(3), PlantedMotion::Pan(0.0, 2.0), 8, 32), 0.75)),
            item("zoom", textured_clip(&Texture::new(4), PlantedMotion::Zoom(1.12), 8, 32)),
        ]
    }

    #[test]
    fn empty_input_gives_empty_manifest() {
        let out = run_pipeline(&[], &PrepConfig::default(), &Scorers::default()).unwrap();
        assert!(out.records.is_empty());
        assert!(histograms(&out.records).iter().all(|b| b.all == 0 && b.kept == 0));
        let mut buf = Vec::new();
        write_manifest(&out.records, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn planted_clips_filtered_and_labelled() {
        let out = run_pipeline(&corpus(), &PrepConfig::default(), &Scorers::default()).unwrap();
        let by = |id: &str| out.records.iter().find(|r| r.source_id == id).unwrap();
        assert_eq!(out.records.len(), 4);
        assert!(by("pan").keep);
        assert_eq!(by("pan").camera, CameraMotion::PanLeft);
        assert!(!by("still").keep);
        assert_eq!(by("still").camera, CameraMotion::Static);
        assert!(!by("text").keep);
        assert!(by("text").ocr_ratio > 0.3);
        assert_eq!(by("zoom").camera, CameraMotion::ZoomIn);
        assert!(by("pan").caption.starts_with("clip pan aesthetic score: "));
        assert!(by("pan").caption.ends_with("camera motion: pan left"));
    }

    #[test]
    fn order_independent_and_deterministic() {
        let items = corpus();
        let mut rev = items.clone();
        rev.reverse();
        let a = run_pipeline(&items, &PrepConfig::default(), &Scorers::default()).unwrap();
        let b = run_pipeline(&rev, &PrepConfig::default(), &Scorers::default()).unwrap();
        assert_eq!(a.records, b.records);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_manifest(&a.records, &mut x).unwrap();
        write_manifest(&b.records, &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn splice_becomes_two_clips_and_bad_items_are_recorded() {
        let a = textured_clip(&Texture::new(5).tinted([0.3, 0.3, 0.7]), PlantedMotion::Pan(2.0, 0.0), 6, 16);
        let b = textured_clip(&Texture::new(6).tinted([0.75, 0.3, 0.3]), PlantedMotion::Pan(-2.0, 0.0), 7, 16);
        let items = vec![
            item("spliced", VideoTensor::concat(&[a, b]).unwrap()),
            PrepItem { id: "missing".into(), caption: String::new(), source: Source::Vten("/nonexistent/x.vten".into()) },
        ];
        let out = run_pipeline(&items, &PrepConfig::default(), &Scorers::default()).unwrap();
        assert_eq!(out.records.iter().map(|r| (r.start, r.frames)).collect::<Vec<_>>(), vec![(0, 6), (6, 7)]);
        assert_eq!(out.records[1].camera, CameraMotion::PanRight);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].source, "missing");
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        fs::create_dir_all(input.join("frames")).unwrap();
        textured_clip(&Texture::new(7), PlantedMotion::Pan(1.0, 0.0), 5, 16).write(input.join("a.vten")).unwrap();
        fs::write(input.join("a.txt"), "blue waves\n").unwrap();
        let v = textured_clip(&Texture::new(8), PlantedMotion::Pan(0.0, 2.0), 4, 16);
        for f in 0..4 {
            let img = image::RgbImage::from_fn(16, 16, |x, y| {
                image::Rgb([0, 1, 2].map(|c| (v.pixel(f, y as usize, x as usize, c) * 255.0).round() as u8))
            });
            img.save(input.join("frames").join(format!("{:03}.png", f))).unwrap();
        }
        fs::write(input.join("broken.vten"), b"nope").unwrap();
        let items = scan_input_dir(&input).unwrap();
        assert_eq!(items.len(), 3);
        let out = run_pipeline(&items, &PrepConfig::default(), &Scorers::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.errors.len(), 1);
        assert!(out.records[0].caption.starts_with("blue waves aesthetic score"));
        assert_eq!(out.records[1].camera, CameraMotion::TiltUp);
        let o = dir.path().join("out");
        write_outputs(&out, &o).unwrap();
        let manifest = fs::read_to_string(o.join("manifest.csv")).unwrap();
        assert!(manifest.starts_with(&MANIFEST_COLUMNS.join(",")));
        assert!(o.join(out.records[0].path()).exists());
        assert!(fs::read_to_string(o.join("stats.csv")).unwrap().contains("duration_s"));
    }

    #[test]
    fn config_validation() {
        assert!(PrepConfig::default().validate().is_ok());
        let bad = PrepConfig { max_ocr_ratio: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(run_pipeline(&[], &bad, &Scorers::default()).is_err());
    }
}

//! Subcommand bodies; the binary only parses arguments and dispatches.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;

use super::config::KitConfig;
use super::generate::{generate, ConditionInput, GenerateRequest};
use super::synth::{make_synthetic, read_dataset, write_dataset, Split};
use super::train::{loss_record, Trainer, LOSS_COLUMNS};
use super::validate::evaluate_grid;
use crate::bucket::{load_report, plan_epoch, write_load_csv};
use crate::codec::{fit_stats, metrics, train_codec, CausalCodec, VideoTensor};
use crate::conditioning::{format_caption, CameraMotion, ScoredCaption};
use crate::dataprep::{run_pipeline, scan_input_dir, write_outputs, Scorers};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;
use crate::stdit::Stdit;

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn synth(cfg: &KitConfig, out: &Path, n: usize, seed: u64) -> Result<()> {
    let clips = make_synthetic(n, &cfg.synth, seed)?;
    write_dataset(&clips, out)?;
    let val = clips.iter().filter(|c| c.split == Split::Val).count();
    println!("wrote {} clips ({} held out) to {}", clips.len(), val, out.display());
    Ok(())
}

pub fn prep(cfg: &KitConfig, input: &Path, out: &Path) -> Result<()> {
    let items = scan_input_dir(input)?;
    let result = run_pipeline(&items, &cfg.prep, &Scorers::default())?;
    write_outputs(&result, out)?;
    let kept = result.records.iter().filter(|r| r.keep).count();
    println!(
        "{} sources, {} clips, {} kept, {} skipped scenes, {} errors",
        items.len(),
        result.records.len(),
        kept,
        result.skipped,
        result.errors.len()
    );
    for e in &result.errors {
        eprintln!("warning: {}: {}", e.source, e.message);
    }
    Ok(())
}

fn load_videos(data: &Path, split: Split) -> Result<Vec<VideoTensor>> {
    read_dataset(data)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| VideoTensor::read(&e.path))
        .collect()
}

pub fn codec_train(cfg: &KitConfig, data: &Path, out: &Path) -> Result<()> {
    let train = load_videos(data, Split::Train)?;
    let codec = CausalCodec::new(cfg.codec.clone())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("loss.csv");
    let mut log = csv::Writer::from_writer(create(&log_path)?);
    log.write_record(["phase", "step", "loss"])?;
    let mut failed = None;
    let codec = train_codec(codec, &train, &cfg.codec_schedule, cfg.seed, |phase, step, loss| {
        if let Err(e) = log.write_record([phase.to_string(), step.to_string(), loss.to_string()]) {
            failed.get_or_insert(e);
        }
        if step % 100 == 0 {
            info!("codec phase {} step {} loss {:.5}", phase, step, loss);
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    codec.save(out)?;
    let val = load_videos(data, Split::Val)?;
    let check = if val.is_empty() { &train } else { &val };
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for v in check {
        let q = metrics(v, &codec.roundtrip(v)?)?;
        psnr += q.psnr / check.len() as f64;
        ssim += q.ssim / check.len() as f64;
    }
    println!("codec saved to {}: mean PSNR {:.2} dB, SSIM {:.4} over {} clips", out.display(), psnr, ssim, check.len());
    Ok(())
}

pub fn codec_roundtrip(codec_dir: &Path, input: &Path, out: &Path) -> Result<()> {
    let codec = CausalCodec::load(codec_dir)?;
    let v = read_video(input)?;
    let rec = codec.roundtrip(&v)?;
    rec.write(out)?;
    let q = metrics(&v, &rec)?;
    println!("PSNR {:.2} dB, SSIM {:.4}", q.psnr, q.ssim);
    Ok(())
}

/// Refits latent statistics if the codec was saved without them.
fn load_codec(dir: &Path, data: &Path) -> Result<CausalCodec> {
    let mut codec = CausalCodec::load(dir)?;
    if codec.stats.validate().is_err() {
        codec.stats = fit_stats(&codec, &load_videos(data, Split::Train)?)?;
    }
    Ok(codec)
}

pub fn train(cfg: &KitConfig, data: &Path, codec_dir: &Path, out: &Path, resume: Option<&Path>, max_steps: Option<usize>) -> Result<()> {
    let entries = read_dataset(data)?;
    let codec = load_codec(codec_dir, data)?;
    let mut trainer = match resume {
        Some(dir) => Trainer::resume(cfg, &codec, &entries, dir)?,
        None => Trainer::new(cfg, &codec, &entries)?,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let loss_path = out.join("loss.csv");
    let append = resume.is_some() && loss_path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&loss_path)
        .map_err(|e| Error::io(&loss_path, e))?;
    let mut log = csv::Writer::from_writer(file);
    if !append {
        log.write_record(LOSS_COLUMNS)?;
    }
    let mut failed = None;
    let summaries = trainer.run(max_steps, Some(&out.join("checkpoints")), |r| {
        if let Err(e) = log.write_record(loss_record(r)) {
            failed.get_or_insert(e);
        }
        if r.step % 50 == 0 {
            info!("stage {} step {} loss {:.4} bucket [{}]", r.stage, r.step, r.loss, r.bucket);
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    log.flush().map_err(|e| Error::io(&loss_path, e))?;
    let stages_path = out.join("stages.csv");
    let append = resume.is_some() && stages_path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&stages_path)
        .map_err(|e| Error::io(&stages_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if !append {
        w.write_record(["stage", "steps", "mean_loss", "masked", "eligible", "masked_fraction"])?;
    }
    for s in &summaries {
        w.write_record([
            s.stage.to_string(),
            s.steps.to_string(),
            s.mean_loss.to_string(),
            s.masked.to_string(),
            s.eligible.to_string(),
            s.masked_fraction().to_string(),
        ])?;
        println!(
            "stage {}: {} steps, mean loss {:.4}, masked fraction {:.3} ({} of {} video samples)",
            s.stage,
            s.steps,
            s.mean_loss,
            s.masked_fraction(),
            s.masked,
            s.eligible
        );
    }
    w.flush().map_err(|e| Error::io(&stages_path, e))?;
    trainer.save(&out.join("latest"))?;
    println!("checkpoint written to {}", out.join("latest").display());
    Ok(())
}

pub fn validate(cfg: &KitConfig, data: &Path, codec_dir: &Path, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let entries = read_dataset(data)?;
    let codec = load_codec(codec_dir, data)?;
    let model = match checkpoint {
        Some(dir) => Stdit::load(dir.join("model"))?,
        None => Stdit::new(cfg.model.clone())?,
    };
    let grid = evaluate_grid(&model, &codec, &entries, cfg)?;
    match out {
        Some(p) => grid.write_csv(create(p)?)?,
        None => grid.write_csv(std::io::stdout())?,
    }
    let absent = grid.cells.iter().filter(|c| c.loss.is_none()).count();
    eprintln!("validation total {:.5} over {} cells ({} absent)", grid.total(), grid.cells.len() - absent, absent);
    Ok(())
}

/// Reads a `.vten` video or a PNG image (as a one-frame video).
pub fn read_video(path: &Path) -> Result<VideoTensor> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        return VideoTensor::new(Tensor::new(vec![1, h as usize, w as usize, 3], data)?);
    }
    VideoTensor::read(path)
}

/// Writes every frame as `<dir>/frame_NNN.png`.
pub fn write_png_frames(v: &VideoTensor, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in 0..v.frames() {
        let img = image::RgbImage::from_fn(v.width() as u32, v.height() as u32, |x, y| {
            let px = |c: usize| (v.pixel(f, y as usize, x as usize, c.min(v.channels() - 1)) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        });
        let p = dir.join(format!("frame_{:03}.png", f));
        img.save(&p).map_err(|e| Error::format(&p, e.to_string()))?;
    }
    Ok(())
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub codec: PathBuf,
    pub prompt: String,
    pub aesthetic: Option<f64>,
    pub motion: Option<f64>,
    pub camera: Option<CameraMotion>,
    pub frames: usize,
    pub resolution: usize,
    pub steps: Option<usize>,
    pub seed: u64,
    pub fps: f64,
    pub condition: Option<String>,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub png_dir: Option<PathBuf>,
}

pub fn sample(cfg: &KitConfig, a: &SampleArgs) -> Result<()> {
    let model = Stdit::load(a.checkpoint.join("model"))?;
    let codec = CausalCodec::load(&a.codec)?;
    let prompt = match (a.aesthetic, a.motion) {
        (Some(aes), Some(motion)) => format_caption(&ScoredCaption::new(a.prompt.clone(), aes, motion, a.camera)?),
        (None, None) if a.camera.is_none() => a.prompt.clone(),
        _ => return Err(Error::Argument("--aesthetic and --motion go together (and --camera needs both)".into())),
    };
    let condition = match (&a.condition, &a.input) {
        (Some(spec), Some(input)) => Some(ConditionInput { spec: spec.clone(), video: read_video(input)? }),
        (None, None) => None,
        _ => return Err(Error::Argument("--condition and --input go together".into())),
    };
    let req = GenerateRequest {
        prompt,
        frames: a.frames,
        resolution: a.resolution,
        fps: a.fps,
        steps: a.steps.unwrap_or(cfg.flow.steps),
        seed: a.seed,
        text_max_len: cfg.text.max_len,
        condition,
    };
    let v = generate(&model, &codec, &req)?;
    v.write(&a.out)?;
    if let Some(dir) = &a.png_dir {
        write_png_frames(&v, dir)?;
    }
    println!("wrote {} frames at {}x{} to {}", v.frames(), v.height(), v.width(), a.out.display());
    Ok(())
}

pub fn bucket_plan(cfg: &KitConfig, data: &Path, stage: Option<u32>, dry_run: bool, out: Option<&Path>) -> Result<()> {
    let entries = read_dataset(data)?;
    let metas: Vec<_> = entries.iter().filter(|e| e.split == Split::Train).map(super::data::meta).collect();
    let stages = cfg.stages()?;
    let (id, s) = match stage {
        Some(id) => stages
            .into_iter()
            .find(|(i, _)| *i == id)
            .ok_or_else(|| Error::Argument(format!("no stage {}", id)))?,
        None => stages.into_iter().next().expect("validated config has stages"),
    };
    let table = s.table(&cfg.buckets)?;
    let seed = rng::derive_key(cfg.seed, &[rng::label("train.epoch"), id as u64, 0]);
    let plan = plan_epoch(&metas, &table, seed);
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout()),
    };
    if dry_run {
        let report = load_report(&plan, &table)?;
        write_load_csv(&report, &table, sink)?;
        eprintln!(
            "stage {}: {} batches, tokens per batch max {} min {} mean {:.1}; {} rejected, {} dropped",
            id,
            plan.batches.len(),
            report.max,
            report.min,
            report.mean,
            plan.rejected.len(),
            plan.dropped.len()
        );
    } else {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["batch", "bucket", "clip_ids"])?;
        for (i, b) in plan.batches.iter().enumerate() {
            w.write_record([i.to_string(), table.buckets[b.bucket].to_string(), b.ids.join(" ")])?;
        }
        w.flush().map_err(|e| Error::io("<plan>", e))?;
    }
    Ok(())
}

pub fn model_describe(cfg: &KitConfig) -> Result<()> {
    let model = Stdit::new(cfg.model.clone())?;
    let (rows, total) = model.census();
    for (name, shape, n) in rows {
        println!("{:<32} {:<16} {}", name, format!("{:?}", shape), n);
    }
    println!("total parameters: {}", total);
    Ok(())
}

use std::collections::BTreeMap;
use std::sync::OnceLock;

use open_sora_kit::codec::{train_codec, CausalCodec, CodecSchedule, LatentVideo, VideoTensor};
use open_sora_kit::conditioning::MaskPattern;
use open_sora_kit::pipeline::{
    draw_sample, evaluate_grid, fit_clip, generate, make_synthetic, read_dataset, smoothed, write_dataset, zero_model_reference,
    ConditionInput, DatasetEntry, GenerateRequest, KitConfig, Split, StageConfig, StepReport, Trainer,
};
use open_sora_kit::stdit::Stdit;
use open_sora_kit::Error;
use tempfile::TempDir;

struct Fixture {
    _dir: TempDir,
    entries: Vec<DatasetEntry>,
    codec: CausalCodec,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = KitConfig::default();
        let dir = TempDir::new().unwrap();
        let clips = make_synthetic(30, &cfg.synth, 11).unwrap();
        write_dataset(&clips, dir.path()).unwrap();
        let entries = read_dataset(dir.path()).unwrap();
        let train: Vec<VideoTensor> = clips.iter().filter(|c| c.split == Split::Train).map(|c| c.video.clone()).collect();
        let sched = CodecSchedule { spatial_steps: 150, stage_steps: [80, 60, 80], ..Default::default() };
        let codec = train_codec(CausalCodec::new(cfg.codec.clone()).unwrap(), &train, &sched, 5, |_, _, _| {}).unwrap();
        Fixture { _dir: dir, entries, codec }
    })
}

fn with_steps(steps: &[usize]) -> KitConfig {
    let mut cfg = KitConfig::default();
    let base = cfg.stages.clone();
    cfg.stages = base
        .into_iter()
        .zip(steps)
        .map(|((k, s), &n)| (k, StageConfig { steps: n, ..s }))
        .collect::<BTreeMap<_, _>>();
    cfg
}

fn params(m: &Stdit) -> Vec<Vec<f32>> {
    m.params.ids().map(|id| m.params.get(id).data().to_vec()).collect()
}

#[test]
fn smoothed_training_loss_decreases() {
    let f = fixture();
    let cfg = with_steps(&[300]);
    let mut t = Trainer::new(&cfg, &f.codec, &f.entries).unwrap();
    let mut losses = vec![];
    t.run(None, None, |r: &StepReport| losses.push(r.loss)).unwrap();
    assert_eq!(losses.len(), 300);
    let s = smoothed(&losses, 50);
    assert!(s[299] < s[49], "smoothed loss {} -> {}", s[49], s[299]);
}

#[test]
fn resume_is_bit_exact_across_a_stage_boundary() {
    let f = fixture();
    let cfg = with_steps(&[15, 15, 15]);
    let mut full = Trainer::new(&cfg, &f.codec, &f.entries).unwrap();
    let mut a = vec![];
    full.run(None, None, |r| a.push(r.loss)).unwrap();

    let dir = TempDir::new().unwrap();
    let mut first = Trainer::new(&cfg, &f.codec, &f.entries).unwrap();
    let mut b = vec![];
    first.run(Some(22), None, |r| b.push(r.loss)).unwrap();
    first.save(dir.path()).unwrap();
    drop(first);
    let mut second = Trainer::resume(&cfg, &f.codec, &f.entries, dir.path()).unwrap();
    assert_eq!(second.state.global_step, 22);
    second.run(None, None, |r| b.push(r.loss)).unwrap();

    assert_eq!(a, b);
    assert_eq!(params(&full.model), params(&second.model));
    assert!(second.done());
}

#[test]
fn stage_checkpoints_are_written() {
    let f = fixture();
    let cfg = with_steps(&[3, 2, 2]);
    let dir = TempDir::new().unwrap();
    let mut t = Trainer::new(&cfg, &f.codec, &f.entries).unwrap();
    let summaries = t.run(None, Some(dir.path()), |_| {}).unwrap();
    assert_eq!(summaries.iter().map(|s| s.steps).collect::<Vec<_>>(), vec![3, 2, 2]);
    for s in 1..=3 {
        let m = Stdit::load(dir.path().join(format!("stage{}", s)).join("model")).unwrap();
        assert_eq!(m.cfg, cfg.model);
    }
}

#[test]
fn masked_fraction_matches_configuration() {
    let cfg = KitConfig::default();
    for p in [0.25, 0.5] {
        let n = 10_000;
        let masked = (0..n)
            .filter(|&j| draw_sample(cfg.seed, 2, j / 4, j % 4, &[5, 2, 2, 4], p, &cfg.flow).unwrap().pattern != MaskPattern::NoMask)
            .count();
        let frac = masked as f64 / n as f64;
        assert!((frac - p).abs() <= 0.02, "p {} gave {}", p, frac);
    }
}

#[test]
fn validation_is_deterministic_and_random_weights_match_zero_model() {
    let f = fixture();
    let cfg = KitConfig::default();
    let model = Stdit::new(cfg.model.clone()).unwrap();
    let a = evaluate_grid(&model, &f.codec, &f.entries, &cfg).unwrap();
    let b = evaluate_grid(&model, &f.codec, &f.entries, &cfg).unwrap();
    assert_eq!(a, b);
    let mut checked = 0;
    for c in &a.cells {
        let Some(loss) = c.loss else { continue };
        let (mean, sigma) = zero_model_reference(&f.codec, &f.entries, &cfg, c.pixels, c.frames).unwrap().unwrap();
        // 4σ keeps the family-wise false alarm over ~25 cells near 0.2%
        assert!((loss - mean).abs() <= 4.0 * sigma, "{} {}: {} vs {} ± {}", c.length, c.resolution, loss, mean, sigma);
        checked += 1;
    }
    assert!(checked >= 15);
}

fn request(condition: Option<ConditionInput>, seed: u64) -> GenerateRequest {
    GenerateRequest {
        prompt: "red square moving right".into(),
        frames: 9,
        resolution: 16,
        fps: 4.0,
        steps: 8,
        seed,
        text_max_len: 16,
        condition,
    }
}

fn trained_model(f: &Fixture) -> Stdit {
    let cfg = with_steps(&[40]);
    let mut t = Trainer::new(&cfg, &f.codec, &f.entries).unwrap();
    t.run(None, None, |_| {}).unwrap();
    t.model
}

#[test]
fn first_frame_condition_is_preserved_exactly() {
    let f = fixture();
    let model = trained_model(f);
    let input = VideoTensor::read(&f.entries[2].path).unwrap();
    let cond = ConditionInput { spec: "first:1".into(), video: input.clone() };
    let out = generate(&model, &f.codec, &request(Some(cond), 4)).unwrap();
    assert_eq!(out.frames(), 9);

    let fitted = fit_clip(&input, 16, 16, 0, input.frames().min(9)).unwrap();
    let z = f.codec.encode(&fitted).unwrap().latents;
    let first = z.slice0(0, 1).unwrap();
    let expect = f.codec.decode(&LatentVideo::new(first, f.codec.stats.clone()).unwrap(), 1).unwrap();
    assert_eq!(out.frame_data(0), expect.frame_data(0));

    // a single image also conditions the first frame
    let image = input.frames_range(0, 1).unwrap();
    let out = generate(&model, &f.codec, &request(Some(ConditionInput { spec: "first:1".into(), video: image }), 4)).unwrap();
    assert_eq!(out.frame_data(0), expect.frame_data(0));
}

#[test]
fn sampling_is_seed_deterministic() {
    let f = fixture();
    let model = trained_model(f);
    let a = generate(&model, &f.codec, &request(None, 1)).unwrap();
    let b = generate(&model, &f.codec, &request(None, 1)).unwrap();
    let c = generate(&model, &f.codec, &request(None, 2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn caption_scores_change_the_sample() {
    let f = fixture();
    let model = trained_model(f);
    let mut lo = request(None, 1);
    lo.prompt = "red square moving right aesthetic score: 5.5, motion score: 1".into();
    let mut hi = lo.clone();
    hi.prompt = "red square moving right aesthetic score: 5.5, motion score: 30".into();
    assert_ne!(generate(&model, &f.codec, &lo).unwrap(), generate(&model, &f.codec, &hi).unwrap());
}

#[test]
fn condition_beyond_latent_frames_is_rejected() {
    let f = fixture();
    let model = Stdit::new(KitConfig::default().model).unwrap();
    let input = VideoTensor::read(&f.entries[0].path).unwrap();
    // 9 frames are 3 latent frames
    let cond = ConditionInput { spec: "first:3".into(), video: input };
    assert!(matches!(generate(&model, &f.codec, &request(Some(cond), 0)), Err(Error::Argument(_))));
    let image = VideoTensor::filled(1, 16, 16, &[0.5, 0.5, 0.5]);
    let cond = ConditionInput { spec: "frames:0,1".into(), video: image };
    assert!(matches!(generate(&model, &f.codec, &request(Some(cond), 0)), Err(Error::Argument(_))));
}


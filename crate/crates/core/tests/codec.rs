use open_sora_kit::codec::{latent_frames, train_codec, CausalCodec, CodecConfig, CodecSchedule, CodecTrainer, VideoTensor};
use open_sora_kit::rng;

fn noise_video(frames: usize, side: usize, seed: u64) -> VideoTensor {
    VideoTensor::from_fn(frames, side, side, 3, |f, y, x, c| {
        0.1 + 0.8 * rng::uniform_at(seed, &[f as u64, y as u64, x as u64, c as u64])
    })
}

#[test]
fn exhaustive_causality_probe() {
    let codec = CausalCodec::new(CodecConfig { seed: 11, ..Default::default() }).unwrap();
    let v = noise_video(17, 8, 1);
    let base = codec.encode(&v).unwrap();
    let frame = 8 * 8 * 3;
    for j in 0..17 {
        let mut t = v.tensor().clone();
        let mut moved = t.clone().into_data();
        for p in &mut moved[j * frame..(j + 1) * frame] {
            *p = 1.0 - *p;
        }
        t = open_sora_kit::numerics::Tensor::new(t.shape().to_vec(), moved).unwrap();
        let z = codec.encode(&VideoTensor::new(t).unwrap()).unwrap();
        for i in 0..base.frames() {
            let same = z.latents.slice0(i, 1).unwrap() == base.latents.slice0(i, 1).unwrap();
            if j >= 1 + 4 * i {
                assert!(same, "frame {} leaked into latent {}", j, i);
            } else if j + 3 >= 4 * i {
                // frame j sits inside latent i's window
                assert!(!same, "frame {} had no effect on latent {}", j, i);
            }
        }
    }
}

#[test]
fn zero_padded_clip_matches_unpadded_prefix() {
    let codec = CausalCodec::new(CodecConfig { seed: 12, ..Default::default() }).unwrap();
    for l in [1usize, 5, 9, 13, 17] {
        let clip = noise_video(l, 8, 2 + l as u64);
        let pad = VideoTensor::from_fn(17, 8, 8, 3, |f, y, x, c| {
            if f < l {
                clip.pixel(f, y, x, c) as f64
            } else {
                0.0
            }
        });
        let full = codec.encode(&pad).unwrap();
        let direct = codec.encode(&clip).unwrap();
        let tl = latent_frames(l);
        assert_eq!(full.latents.slice0(0, tl).unwrap(), direct.latents, "L={}", l);
    }
}

#[test]
fn roundtrip_loss_decreases_under_training() {
    let data: Vec<VideoTensor> = (0..3)
        .map(|s| {
            VideoTensor::from_fn(5, 16, 16, 3, |f, y, x, c| {
                let phase = (x as f64 + f as f64 + 3.0 * s as f64) / 5.0 + c as f64;
                0.5 + 0.35 * (phase.sin() * (y as f64 / 7.0).cos())
            })
        })
        .collect();
    let mut codec = CausalCodec::new(CodecConfig { seed: 13, ..Default::default() }).unwrap();
    codec.set_stage(3, false).unwrap();
    let mut trainer = CodecTrainer::new(codec, 2e-3);
    let losses: Vec<f64> = (0..=200).map(|_| trainer.step(&data).unwrap()).collect();
    let window = |a: usize| losses[a..a + 20].iter().sum::<f64>() / 20.0;
    let marks: Vec<f64> = (0..=180).step_by(45).map(window).collect();
    for w in marks.windows(2) {
        assert!(w[1] < w[0], "windowed loss not decreasing: {:?}", marks);
    }
    assert!(losses[200] < losses[0]);
}

#[test]
fn constant_color_clips_roundtrip_below_1e3() {
    let colors = [[0.9, 0.2, 0.1], [0.1, 0.6, 0.9], [0.5, 0.5, 0.5], [0.2, 0.8, 0.3], [0.95, 0.9, 0.2]];
    let data: Vec<VideoTensor> = colors.iter().map(|c| VideoTensor::filled(9, 16, 16, c)).collect();
    let sched = CodecSchedule {
        spatial_steps: 300,
        stage_steps: [150, 100, 1000],
        batch: 4,
        lr: 3e-3,
        clip_frames: 9,
        max_mixed_frames: 9,
        ..Default::default()
    };
    let codec = CausalCodec::new(CodecConfig { seed: 14, ..Default::default() }).unwrap();
    let codec = train_codec(codec, &data, &sched, 5, |_, _, _| {}).unwrap();
    for v in &data {
        let rec = codec.roundtrip(v).unwrap();
        let mse = v
            .tensor()
            .data()
            .iter()
            .zip(rec.tensor().data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / v.tensor().len() as f64;
        assert!(mse < 1e-3, "roundtrip mse {}", mse);
    }
    codec.stats.validate().unwrap();
}

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::ChannelStats;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::Rng;

/// Token count of the reference bucket (16 px, 16 frames: 2×2 latent
/// positions over 5 latent frames).
pub const REFERENCE_TOKENS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub steps: usize,
    /// Logit-normal location.
    pub logit_loc: f64,
    /// Logit-normal scale.
    pub logit_scale: f64,
    pub reference_tokens: usize,
    /// Apply the resolution-aware shift.
    pub shift: bool,
    pub lr: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            logit_loc: 0.0,
            logit_scale: 1.0,
            reference_tokens: REFERENCE_TOKENS,
            shift: true,
            lr: 5e-5,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("flow steps must be >= 1".into()));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) || !self.logit_loc.is_finite() {
            return Err(Error::Config(format!(
                "logit-normal needs finite loc and scale > 0, got {} / {}",
                self.logit_loc, self.logit_scale
            )));
        }
        if self.reference_tokens == 0 {
            return Err(Error::Config("reference_tokens must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

fn check_frames(x: &Tensor<f32>, t: &[f64]) -> Result<usize> {
    let frames = *x.shape().first().ok_or_else(|| Error::dim("interpolate", "scalar latent"))?;
    if t.len() != frames {
        return Err(Error::dim("interpolate", format!("{} timesteps for {} frames", t.len(), frames)));
    }
    if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("timestep {} outside [0, 1]", bad)));
    }
    Ok(frames)
}

/// `x_t = (1 - t_f)·x0 + t_f·x1` per leading-axis frame `f`.
pub fn interpolate(x0: &Tensor<f32>, x1: &Tensor<f32>, t: &[f64]) -> Result<Tensor<f32>> {
    if x0.shape() != x1.shape() {
        return Err(Error::dim("interpolate", format!("{:?} vs {:?}", x0.shape(), x1.shape())));
    }
    let frames = check_frames(x0, t)?;
    let per = x0.len() / frames.max(1);
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .enumerate()
        .map(|(i, (&a, &b))| {
            let tf = t[i / per];
            if tf == 0.0 {
                a
            } else if tf == 1.0 {
                b
            } else {
                ((1.0 - tf) * a as f64 + tf * b as f64) as f32
            }
        })
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// `v = x1 - x0`.
pub fn velocity_target(x0: &Tensor<f32>, x1: &Tensor<f32>) -> Result<Tensor<f32>> {
    if x0.shape() != x1.shape() {
        return Err(Error::dim("velocity_target", format!("{:?} vs {:?}", x0.shape(), x1.shape())));
    }
    let data = x0.data().iter().zip(x1.data()).map(|(&a, &b)| b - a).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// `sqrt(tokens / reference)`.
pub fn shift_alpha(tokens: usize, reference: usize) -> f64 {
    (tokens as f64 / reference as f64).sqrt()
}

/// `α·u / (1 + (α - 1)·u)`.
pub fn shift_timestep(u: f64, alpha: f64) -> f64 {
    alpha * u / (1.0 + (alpha - 1.0) * u)
}

const T_MARGIN: f64 = 1e-7;

/// Logit-normal draw, shifted toward noise for large token counts. The
/// result lies strictly inside `(0, 1)`.
pub fn sample_timestep(r: &mut Rng, cfg: &FlowConfig, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::Precondition("token_count must be >= 1".into()));
    }
    let normal = Normal::new(cfg.logit_loc, cfg.logit_scale)
        .map_err(|e| Error::Config(format!("logit-normal: {}", e)))?;
    let z = normal.sample(r);
    let u = 1.0 / (1.0 + (-z).exp());
    let t = if cfg.shift {
        shift_timestep(u, shift_alpha(token_count, cfg.reference_tokens))
    } else {
        u
    };
    Ok(t.clamp(T_MARGIN, 1.0 - T_MARGIN))
}

/// Standard normal noise of `shape`.
pub fn noise_like(r: &mut Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| r.sample::<f64, _>(rand_distr::StandardNormal))
}

fn per_channel(z: &Tensor<f32>, stats: &ChannelStats, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f32>> {
    stats.validate()?;
    let c = *z.shape().last().ok_or_else(|| Error::dim("channel_normalize", "scalar latent"))?;
    if c != stats.channels() {
        return Err(Error::dim("channel_normalize", format!("{} channels vs {} in stats", c, stats.channels())));
    }
    let data = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(v as f64, stats.mean[i % c], stats.std[i % c]) as f32)
        .collect();
    Tensor::new(z.shape().to_vec(), data)
}

/// `(z - mean) / std` per trailing-axis channel.
pub fn channel_normalize(z: &Tensor<f32>, stats: &ChannelStats) -> Result<Tensor<f32>> {
    per_channel(z, stats, |v, m, s| (v - m) / s)
}

pub fn channel_denormalize(z: &Tensor<f32>, stats: &ChannelStats) -> Result<Tensor<f32>> {
    per_channel(z, stats, |v, m, s| v * s + m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal as SNormal};

    fn rand_t(shape: &[usize], seed: u64) -> Tensor<f32> {
        Tensor::from_fn(shape, |i| rng::uniform_at(seed, &[i as u64]) * 4.0 - 2.0)
    }

    #[test]
    fn endpoints_and_midpoint() {
        let (a, b) = (rand_t(&[3, 2, 2, 4], 1), rand_t(&[3, 2, 2, 4], 2));
        assert_eq!(interpolate(&a, &b, &[0.0; 3]).unwrap(), a);
        assert_eq!(interpolate(&a, &b, &[1.0; 3]).unwrap(), b);
        let mid = interpolate(&a, &b, &[0.5; 3]).unwrap();
        for ((m, x), y) in mid.data().iter().zip(a.data()).zip(b.data()) {
            assert!((*m as f64 - 0.5 * (*x as f64 + *y as f64)).abs() < 1e-6);
        }
        assert!(matches!(interpolate(&a, &b, &[0.5, 1.5, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(interpolate(&a, &b, &[0.5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn per_frame_timesteps() {
        let (a, b) = (Tensor::<f32>::zeros(&[2, 3]), Tensor::<f32>::full(&[2, 3], 1.0));
        let x = interpolate(&a, &b, &[0.25, 0.75]).unwrap();
        assert_eq!(x.data(), &[0.25, 0.25, 0.25, 0.75, 0.75, 0.75]);
    }

    #[test]
    fn velocity_examples() {
        let a = rand_t(&[4, 3], 3);
        assert!(velocity_target(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let mut e = vec![0.0f32; 12];
        e[5] = 1.0;
        let e = Tensor::new(vec![4, 3], e).unwrap();
        assert_eq!(velocity_target(&Tensor::zeros(&[4, 3]), &e).unwrap(), e);
    }

    #[test]
    fn velocity_is_path_derivative() {
        let (a, b) = (rand_t(&[2, 5], 4).cast::<f64>(), rand_t(&[2, 5], 5).cast::<f64>());
        let v = velocity_target(&a.cast(), &b.cast()).unwrap();
        let h = 1e-3;
        for t in [0.2, 0.5, 0.8] {
            let at = |s: f64| -> Vec<f64> { a.data().iter().zip(b.data()).map(|(x, y)| (1.0 - s) * x + s * y).collect() };
            let (p, m) = (at(t + h), at(t - h));
            for i in 0..10 {
                let fd = (p[i] - m[i]) / (2.0 * h);
                assert!((fd - v.data()[i] as f64).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn median_is_one_half() {
        let cfg = FlowConfig { shift: false, ..Default::default() };
        let mut r = rng::stream(1, &[]);
        let mut ts: Vec<f64> = (0..100_000).map(|_| sample_timestep(&mut r, &cfg, 20).unwrap()).collect();
        ts.sort_by(f64::total_cmp);
        assert!((ts[50_000] - 0.5).abs() < 0.01);
    }

    #[test]
    fn unit_alpha_matches_logit_normal() {
        let cfg = FlowConfig::default();
        let mut r = rng::stream(2, &[]);
        let mut ts: Vec<f64> = (0..20_000).map(|_| sample_timestep(&mut r, &cfg, REFERENCE_TOKENS).unwrap()).collect();
        ts.sort_by(f64::total_cmp);
        let n = SNormal::new(0.0, 1.0).unwrap();
        let cdf = |t: f64| n.cdf((t / (1.0 - t)).ln());
        let d = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let c = cdf(t);
                (c - i as f64 / ts.len() as f64).abs().max(((i + 1) as f64 / ts.len() as f64 - c).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov asymptotic critical value at p = 0.01
        assert!(d * (ts.len() as f64).sqrt() < 1.628, "D = {}", d);
    }

    #[test]
    fn shift_pushes_toward_noise() {
        let cfg = FlowConfig::default();
        let mean = |tokens: usize, seed: u64| {
            let mut r = rng::stream(seed, &[]);
            (0..100_000).map(|_| sample_timestep(&mut r, &cfg, tokens).unwrap()).sum::<f64>() / 1e5
        };
        assert!(mean(4 * REFERENCE_TOKENS, 3) > mean(REFERENCE_TOKENS, 4));
    }

    #[test]
    fn normalize_moments_and_inverse() {
        let zs: Vec<Tensor<f32>> = (0..4)
            .map(|s| Tensor::from_fn(&[3, 2, 2, 4], |i| (rng::uniform_at(s, &[i as u64]) * 3.0 + (i % 4) as f64) as f64))
            .collect();
        let stats = ChannelStats::fit(zs.iter()).unwrap();
        let normed: Vec<Tensor<f32>> = zs.iter().map(|z| channel_normalize(z, &stats).unwrap()).collect();
        let again = ChannelStats::fit(normed.iter()).unwrap();
        for c in 0..4 {
            assert!(again.mean[c].abs() < 1e-6);
            assert!((again.std[c] - 1.0).abs() < 1e-4);
        }
        let back = channel_denormalize(&normed[0], &stats).unwrap();
        assert!(back.max_abs_diff(&zs[0]) < 1e-5);
        let ident = ChannelStats::identity(4);
        assert!(channel_normalize(&zs[1], &ident).unwrap().max_abs_diff(&zs[1]) < 1e-6);
        let bad = ChannelStats { mean: vec![0.0; 4], std: vec![1.0, 0.0, 1.0, 1.0] };
        assert!(matches!(channel_normalize(&zs[0], &bad), Err(Error::DegenerateStats { .. })));
    }

    proptest! {
        #[test]
        fn timesteps_strictly_inside(seed in any::<u64>(), tokens in 1usize..5000, loc in -8.0f64..8.0) {
            let cfg = FlowConfig { logit_loc: loc, logit_scale: 3.0, ..Default::default() };
            let mut r = rng::stream(seed, &[]);
            for _ in 0..50 {
                let t = sample_timestep(&mut r, &cfg, tokens).unwrap();
                prop_assert!(t > 0.0 && t < 1.0);
            }
        }
    }
}

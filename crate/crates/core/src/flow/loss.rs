use super::path::{interpolate, noise_like, sample_timestep, velocity_target, FlowConfig};
use crate::conditioning::{assign_timesteps, FrameMask};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Tensor, Var};
use crate::rng::Rng;

/// Timesteps used for validation: midpoints of ten equal bins.
pub const VALIDATION_TIMESTEPS: [f64; 10] = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];

/// Anything that predicts a velocity for `x_t [T, ...]` at per-frame `t`.
pub trait VelocityModel {
    fn predict(&self, x_t: &Tensor<f32>, t: &[f64]) -> Result<Tensor<f32>>;
}

impl<F> VelocityModel for F
where
    F: Fn(&Tensor<f32>, &[f64]) -> Result<Tensor<f32>>,
{
    fn predict(&self, x_t: &Tensor<f32>, t: &[f64]) -> Result<Tensor<f32>> {
        self(x_t, t)
    }
}

/// A training input: noised latent, per-frame timesteps, regression target
/// and which frames count toward the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedSample {
    pub x_t: Tensor<f32>,
    pub t: Vec<f64>,
    pub v: Tensor<f32>,
    pub loss_frames: Vec<bool>,
}

/// Builds the sample for clean `x0`, noise `x1` and drawn timestep `t`.
/// Conditioning frames sit at timestep 0 (clean) and are left out of the loss.
pub fn noised_sample(x0: &Tensor<f32>, x1: &Tensor<f32>, t: f64, mask: &FrameMask) -> Result<NoisedSample> {
    let frames = x0.shape().first().copied().unwrap_or(0);
    if mask.len() != frames {
        return Err(Error::dim("noised_sample", format!("mask of {} for {} frames", mask.len(), frames)));
    }
    let ts = assign_timesteps(mask, t)?;
    Ok(NoisedSample {
        x_t: interpolate(x0, x1, &ts)?,
        v: velocity_target(x0, x1)?,
        t: ts,
        loss_frames: mask.generated(),
    })
}

fn frame_weights(shape: &[usize], loss_frames: &[bool]) -> Result<(Vec<f64>, f64)> {
    let frames = shape.first().copied().unwrap_or(0);
    if loss_frames.len() != frames {
        return Err(Error::dim("masked_mse", format!("{} flags for {} frames", loss_frames.len(), frames)));
    }
    let kept = loss_frames.iter().filter(|&&k| k).count();
    if kept == 0 {
        return Err(Error::Precondition("every frame is conditioning; nothing to score".into()));
    }
    let per = shape.iter().skip(1).product::<usize>();
    let w = loss_frames
        .iter()
        .flat_map(|&k| std::iter::repeat_n(if k { 1.0 } else { 0.0 }, per))
        .collect();
    Ok((w, (kept * per) as f64))
}

/// Mean squared error over the frames flagged in `loss_frames`.
pub fn masked_mse(pred: &Tensor<f32>, target: &Tensor<f32>, loss_frames: &[bool]) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("masked_mse", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let (w, n) = frame_weights(pred.shape(), loss_frames)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(&w)
        .map(|((&p, &t), &w)| w * (p as f64 - t as f64).powi(2))
        .sum();
    Ok(s / n)
}

/// Graph version of [`masked_mse`] for a prediction `pred` against a constant target.
pub fn g_masked_mse<S: Scalar>(g: &mut Graph<S>, pred: Var, target: &Tensor<f32>, loss_frames: &[bool]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if shape != target.shape() {
        return Err(Error::dim("masked_mse", format!("{:?} vs {:?}", shape, target.shape())));
    }
    let (w, n) = frame_weights(&shape, loss_frames)?;
    let tv = g.constant(target.cast());
    let d = g.sub(pred, tv)?;
    let sq = g.square(d)?;
    let wv = g.constant(Tensor::from_f64_slice(&shape, &w)?);
    let m = g.mul(sq, wv)?;
    let s = g.sum(m)?;
    g.scale(s, 1.0 / n)
}

/// One stochastic flow-matching loss evaluation: draws noise and a
/// timestep from `r`.
pub fn training_loss<M: VelocityModel>(model: &M, x0: &Tensor<f32>, mask: &FrameMask, r: &mut Rng, cfg: &FlowConfig) -> Result<f64> {
    let tokens = x0.len() / x0.shape().last().copied().unwrap_or(1).max(1);
    let t = sample_timestep(r, cfg, tokens)?;
    let x1 = noise_like(r, x0.shape());
    let s = noised_sample(x0, &x1, t, mask)?;
    let pred = model.predict(&s.x_t, &s.t)?;
    masked_mse(&pred, &s.v, &s.loss_frames)
}

/// Loss averaged over [`VALIDATION_TIMESTEPS`] with fixed noise `x1`.
pub fn validation_loss<M: VelocityModel>(model: &M, x0: &Tensor<f32>, x1: &Tensor<f32>, mask: &FrameMask) -> Result<f64> {
    let mut total = 0.0;
    for &t in &VALIDATION_TIMESTEPS {
        let s = noised_sample(x0, x1, t, mask)?;
        let pred = model.predict(&s.x_t, &s.t)?;
        total += masked_mse(&pred, &s.v, &s.loss_frames)?;
    }
    Ok(total / VALIDATION_TIMESTEPS.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn latent(seed: u64) -> Tensor<f32> {
        Tensor::from_fn(&[3, 2, 2, 4], |i| rng::uniform_at(seed, &[i as u64]) * 2.0 - 1.0)
    }

    #[test]
    fn oracle_model_scores_zero() {
        let x0 = latent(1);
        let x1 = latent(2);
        let v = velocity_target(&x0, &x1).unwrap();
        let oracle = |_: &Tensor<f32>, _: &[f64]| Ok(v.clone());
        let l = validation_loss(&oracle, &x0, &x1, &FrameMask::none(3)).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_model_matches_monte_carlo() {
        let x0 = latent(3);
        let zero = |x: &Tensor<f32>, _: &[f64]| Ok(Tensor::zeros(x.shape()));
        let mut r = rng::stream(4, &[]);
        let cfg = FlowConfig::default();
        let n = 4000;
        let mean = (0..n)
            .map(|_| training_loss(&zero, &x0, &FrameMask::none(3), &mut r, &cfg).unwrap())
            .sum::<f64>()
            / n as f64;
        // E‖x1 - x0‖² per element = 1 + mean(x0²)
        let expect = 1.0 + x0.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x0.len() as f64;
        assert!((mean - expect).abs() < 0.02, "{} vs {}", mean, expect);
    }

    #[test]
    fn validation_visits_fixed_timesteps() {
        let x0 = latent(5);
        let x1 = latent(6);
        let seen = std::cell::RefCell::new(Vec::new());
        let spy = |x: &Tensor<f32>, t: &[f64]| {
            seen.borrow_mut().push(t[1]);
            Ok(Tensor::zeros(x.shape()))
        };
        let mask = FrameMask::new(vec![true, false, false]);
        validation_loss(&spy, &x0, &x1, &mask).unwrap();
        assert_eq!(*seen.borrow(), VALIDATION_TIMESTEPS.to_vec());
    }

    #[test]
    fn conditioning_frames_are_clean_and_unscored() {
        let (x0, x1) = (latent(7), latent(8));
        let mask = FrameMask::new(vec![true, false, false]);
        let s = noised_sample(&x0, &x1, 0.6, &mask).unwrap();
        assert_eq!(s.t, vec![0.0, 0.6, 0.6]);
        assert_eq!(s.x_t.slice0(0, 1).unwrap(), x0.slice0(0, 1).unwrap());
        assert_eq!(s.loss_frames, vec![false, true, true]);
        // a prediction wrong only on the conditioning frame scores zero
        let mut pred = s.v.clone().into_data();
        pred[..16].iter_mut().for_each(|v| *v += 5.0);
        let pred = Tensor::new(s.v.shape().to_vec(), pred).unwrap();
        assert_eq!(masked_mse(&pred, &s.v, &s.loss_frames).unwrap(), 0.0);
        let all = FrameMask::new(vec![true; 3]);
        let s = noised_sample(&x0, &x1, 0.6, &all).unwrap();
        assert!(matches!(masked_mse(&pred, &s.v, &s.loss_frames), Err(Error::Precondition(_))));
    }

    #[test]
    fn graph_loss_matches_plain() {
        let (p, t) = (latent(9), latent(10));
        let flags = [true, false, true];
        let mut g = Graph::<f64>::new();
        let pv = g.constant(p.cast());
        let l = g_masked_mse(&mut g, pv, &t, &flags).unwrap();
        let plain = masked_mse(&p, &t, &flags).unwrap();
        assert!((g.value(l).data()[0] - plain).abs() < 1e-12);
    }
}

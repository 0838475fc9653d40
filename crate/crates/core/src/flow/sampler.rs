use super::loss::VelocityModel;
use super::path::noise_like;
use crate::conditioning::{assign_timesteps, FrameMask};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::Rng;

/// Ground-truth latent frames to hold fixed while sampling.
#[derive(Clone, Copy, Debug)]
pub struct SampleCondition<'a> {
    pub mask: &'a FrameMask,
    pub x0: &'a Tensor<f32>,
}

fn overwrite(x: &mut Tensor<f32>, cond: Option<&SampleCondition>) -> Result<()> {
    let Some(c) = cond else { return Ok(()) };
    if c.x0.shape() != x.shape() || c.mask.len() != x.shape()[0] {
        return Err(Error::dim(
            "euler_sample",
            format!("condition {:?} / mask {} vs latent {:?}", c.x0.shape(), c.mask.len(), x.shape()),
        ));
    }
    let per = x.len() / c.mask.len().max(1);
    let src = c.x0.data();
    let dst = x.data_mut();
    for f in (0..c.mask.len()).filter(|&f| c.mask.is_conditioning(f)) {
        dst[f * per..(f + 1) * per].copy_from_slice(&src[f * per..(f + 1) * per]);
    }
    Ok(())
}

/// Integrates `dx/dt = v(x, t)` from `t = 1` at `noise` down to `t = 0`
/// with `steps` uniform Euler steps. Conditioning frames are reset to their
/// ground truth before every model call and at the end.
pub fn euler_from_noise<M: VelocityModel>(
    model: &M,
    noise: &Tensor<f32>,
    cond: Option<&SampleCondition>,
    steps: usize,
) -> Result<Tensor<f32>> {
    if steps == 0 {
        return Err(Error::Precondition("euler_sample needs steps >= 1".into()));
    }
    let frames = *noise.shape().first().ok_or_else(|| Error::dim("euler_sample", "scalar latent"))?;
    let none = FrameMask::none(frames);
    let mask = cond.map_or(&none, |c| c.mask);
    let dt = 1.0 / steps as f64;
    let mut x = noise.clone();
    overwrite(&mut x, cond)?;
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let ts = assign_timesteps(mask, t)?;
        let v = model.predict(&x, &ts)?;
        if v.shape() != x.shape() {
            return Err(Error::dim("euler_sample", format!("velocity {:?} for latent {:?}", v.shape(), x.shape())));
        }
        let next: Vec<f32> = x
            .data()
            .iter()
            .zip(v.data())
            .map(|(&a, &b)| (a as f64 - dt * b as f64) as f32)
            .collect();
        x = Tensor::new(x.shape().to_vec(), next)?;
        overwrite(&mut x, cond)?;
        if !x.is_finite() {
            return Err(Error::NonFinite { op: "euler_sample" });
        }
    }
    Ok(x)
}

/// [`euler_from_noise`] starting from standard normal noise drawn from `r`.
pub fn euler_sample<M: VelocityModel>(
    model: &M,
    shape: &[usize],
    cond: Option<&SampleCondition>,
    steps: usize,
    r: &mut Rng,
) -> Result<Tensor<f32>> {
    let noise = noise_like(r, shape);
    euler_from_noise(model, &noise, cond, steps)
}

//! Two-dimensional Gaussian-mixture flow with a closed-form velocity field.

use rand::Rng as _;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use super::loss::VelocityModel;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::Rng;

/// Isotropic mixture `Σ w_k N(μ_k, σ² I)` in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub sigma: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<[f64; 2]>, sigma: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::Argument("mixture needs one weight per mean".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("weights must be >= 0 and sum to 1, got {:?}", weights)));
        }
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!("sigma must be > 0, got {}", sigma)));
        }
        Ok(Self { weights, means, sigma })
    }

    /// Three well-separated modes on a circle of radius 2.5.
    pub fn three_modes() -> Self {
        let means = (0..3)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 3.0;
                [2.5 * a.cos(), 2.5 * a.sin()]
            })
            .collect();
        Self::new(vec![0.5, 0.3, 0.2], means, 0.3).expect("valid mixture")
    }

    /// `[n, 2]` samples.
    pub fn sample(&self, r: &mut Rng, n: usize) -> Tensor<f32> {
        let pick = WeightedIndex::new(&self.weights).expect("validated weights");
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let m = self.means[pick.sample(r)];
            for d in m {
                let z: f64 = r.sample(StandardNormal);
                data.push((d + self.sigma * z) as f32);
            }
        }
        Tensor::new(vec![n, 2], data).expect("n x 2")
    }

    /// Exact marginal velocity `E[x1 - x0 | x_t = x]` of the linear path
    /// from data (`t = 0`) to standard normal noise (`t = 1`).
    pub fn velocity(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let s2 = (1.0 - t).powi(2) * self.sigma.powi(2) + t * t;
        let logs: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(m, &w)| {
                let d2 = (x[0] - (1.0 - t) * m[0]).powi(2) + (x[1] - (1.0 - t) * m[1]).powi(2);
                w.ln() - d2 / (2.0 * s2)
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let post: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = post.iter().sum();
        let mut v = [0.0; 2];
        for (k, m) in self.means.iter().enumerate() {
            for d in 0..2 {
                let r = x[d] - (1.0 - t) * m[d];
                let e0 = m[d] + (1.0 - t) * self.sigma.powi(2) / s2 * r;
                let e1 = t / s2 * r;
                v[d] += post[k] / z * (e1 - e0);
            }
        }
        v
    }

    /// Classical RK4 solution of the flow from `t = 1` to `t = 0`: the
    /// exact transport of noise onto the mixture, up to solver error.
    pub fn flow_map(&self, x1: [f64; 2], substeps: usize) -> [f64; 2] {
        let h = -1.0 / substeps as f64;
        let mut x = x1;
        let mut t = 1.0;
        let add = |a: [f64; 2], b: [f64; 2], c: f64| [a[0] + c * b[0], a[1] + c * b[1]];
        for _ in 0..substeps {
            let k1 = self.velocity(x, t);
            let k2 = self.velocity(add(x, k1, h / 2.0), t + h / 2.0);
            let k3 = self.velocity(add(x, k2, h / 2.0), t + h / 2.0);
            let k4 = self.velocity(add(x, k3, h), t + h);
            for d in 0..2 {
                x[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            }
            t += h;
        }
        x
    }

    pub fn nearest_mode(&self, p: [f64; 2]) -> usize {
        let d = |m: &[f64; 2]| (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
        (0..self.means.len())
            .min_by(|&a, &b| d(&self.means[a]).total_cmp(&d(&self.means[b])))
            .expect("non-empty")
    }

    /// Fraction of `[n, 2]` points nearest to each mode.
    pub fn mode_fractions(&self, pts: &Tensor<f32>) -> Vec<f64> {
        let mut counts = vec![0usize; self.means.len()];
        let n = pts.len() / 2;
        for p in pts.data().chunks(2) {
            counts[self.nearest_mode([p[0] as f64, p[1] as f64])] += 1;
        }
        counts.into_iter().map(|c| c as f64 / n.max(1) as f64).collect()
    }
}

impl VelocityModel for GaussianMixture {
    /// Rows of `[n, 2]` are points; `t[i]` is the time of row `i`.
    fn predict(&self, x_t: &Tensor<f32>, t: &[f64]) -> Result<Tensor<f32>> {
        if x_t.shape().len() != 2 || x_t.shape()[1] != 2 || t.len() != x_t.shape()[0] {
            return Err(Error::dim("mixture_velocity", format!("{:?} with {} times", x_t.shape(), t.len())));
        }
        let mut out = Vec::with_capacity(x_t.len());
        for (p, &ti) in x_t.data().chunks(2).zip(t) {
            let v = self.velocity([p[0] as f64, p[1] as f64], ti);
            out.extend([v[0] as f32, v[1] as f32]);
        }
        Tensor::new(x_t.shape().to_vec(), out)
    }
}

/// Mean Euclidean distance between paired rows of two `[n, 2]` clouds: the
/// transport cost of that coupling, hence an upper bound on their W1.
pub fn coupled_w1(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() || a.shape().len() != 2 || a.shape()[1] != 2 {
        return Err(Error::dim("coupled_w1", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.shape()[0].max(1) as f64;
    Ok(a.data()
        .chunks(2)
        .zip(b.data().chunks(2))
        .map(|(p, q)| ((p[0] - q[0]) as f64).hypot((p[1] - q[1]) as f64))
        .sum::<f64>()
        / n)
}

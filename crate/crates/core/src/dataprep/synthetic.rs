//! Procedural textures and planted camera motion for exercising the filters.

use rand::Rng as _;

use crate::codec::VideoTensor;
use crate::rng;

const WAVES: usize = 10;

/// Smooth random colour field: a sum of plane waves per channel, defined at
/// any real coordinate so it can be panned and zoomed without resampling.
#[derive(Clone, Debug)]
pub struct Texture {
    /// `(ky, kx, phase)` per wave, per channel.
    waves: [Vec<(f64, f64, f64)>; 3],
    base: [f64; 3],
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::label("dataprep.texture")]);
        let mut channel = || {
            (0..WAVES)
                .map(|_| {
                    let wavelength = r.random_range(8.0..20.0);
                    let angle = r.random_range(0.0..std::f64::consts::TAU);
                    let k = std::f64::consts::TAU / wavelength;
                    (k * angle.sin(), k * angle.cos(), r.random_range(0.0..std::f64::consts::TAU))
                })
                .collect()
        };
        let waves = [channel(), channel(), channel()];
        let base = [0, 1, 2].map(|_| r.random_range(0.25..0.75));
        Self { waves, base }
    }

    /// Same waves around a different mean colour.
    pub fn tinted(mut self, base: [f64; 3]) -> Self {
        self.base = base;
        self
    }

    pub fn sample(&self, y: f64, x: f64, c: usize) -> f64 {
        let s: f64 = self.waves[c % 3].iter().map(|(ky, kx, p)| (ky * y + kx * x + p).sin()).sum();
        self.base[c % 3] + 0.15 * s / (WAVES as f64 / 2.0).sqrt()
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum PlantedMotion {
    Static,
    /// Content velocity `(dx, dy)` in px/frame.
    Pan(f64, f64),
    /// Per-frame magnification of the content about the centre; above 1 the
    /// content grows (zoom in).
    Zoom(f64),
}

/// Square RGB clip of the texture under the given content motion.
pub fn textured_clip(tex: &Texture, motion: PlantedMotion, frames: usize, side: usize) -> VideoTensor {
    let center = (side as f64 - 1.0) / 2.0;
    VideoTensor::from_fn(frames, side, side, 3, |f, y, x, c| {
        let (t, y, x) = (f as f64, y as f64, x as f64);
        let (sy, sx) = match motion {
            PlantedMotion::Static => (y, x),
            PlantedMotion::Pan(dx, dy) => (y - dy * t, x - dx * t),
            PlantedMotion::Zoom(rate) => {
                let z = rate.powf(t);
                (center + (y - center) / z, center + (x - center) / z)
            }
        };
        tex.sample(sy, sx, c)
    })
}

/// Overlays static one-pixel dark/light stripes, a stand-in for rendered
/// text, on the top `fraction` of every frame.
pub fn with_text_band(v: &VideoTensor, fraction: f64) -> VideoTensor {
    let rows = (fraction * v.height() as f64).round() as usize;
    VideoTensor::from_fn(v.frames(), v.height(), v.width(), v.channels(), |f, y, x, c| {
        if y < rows {
            if y % 2 == 0 {
                0.05
            } else {
                0.95
            }
        } else {
            v.pixel(f, y, x, c) as f64
        }
    })
}

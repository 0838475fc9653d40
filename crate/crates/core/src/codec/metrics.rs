use super::video::VideoTensor;
use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;
const WINDOW: usize = 7;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Quality {
    pub ssim: f64,
    pub psnr: f64,
}

/// PSNR in dB for `[0, 1]` data, capped at 100 dB.
pub fn psnr(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.tensor().len() as f64;
    let mse = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over frames and channels with a uniform 7×7 window
/// (shrunk to fit smaller frames) over valid positions.
pub fn ssim(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    let win = WINDOW.min(h).min(w);
    let np = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for f in 0..a.frames() {
        for c in 0..ch {
            for y0 in 0..=h - win {
                for x0 in 0..=w - win {
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for y in y0..y0 + win {
                        for x in x0..x0 + win {
                            let pa = a.pixel(f, y, x, c) as f64;
                            let pb = b.pixel(f, y, x, c) as f64;
                            sa += pa;
                            sb += pb;
                            saa += pa * pa;
                            sbb += pb * pb;
                            sab += pa * pb;
                        }
                    }
                    let (ma, mb) = (sa / np, sb / np);
                    let va = saa / np - ma * ma;
                    let vb = sbb / np - mb * mb;
                    let cov = sab / np - ma * mb;
                    let s = ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                    total += s;
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

pub fn metrics(a: &VideoTensor, b: &VideoTensor) -> Result<Quality> {
    Ok(Quality {
        ssim: ssim(a, b)?,
        psnr: psnr(a, b)?,
    })
}

fn same_shape(a: &VideoTensor, b: &VideoTensor) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::dim(
            "metrics",
            format!("{:?} vs {:?}", a.tensor().shape(), b.tensor().shape()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn noise(seed: u64, lo: f64, span: f64) -> VideoTensor {
        VideoTensor::from_fn(2, 16, 16, 3, |f, y, x, c| {
            lo + span * crate::rng::uniform_at(seed, &[f as u64, y as u64, x as u64, c as u64])
        })
    }

    #[test]
    fn identical_inputs() {
        let a = noise(1, 0.0, 1.0);
        let q = metrics(&a, &a).unwrap();
        assert_eq!(q.psnr, 100.0);
        assert!((q.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_gives_20_db() {
        let a = noise(2, 0.0, 0.8);
        let b = VideoTensor::new(a.tensor().map(|v| v + 0.1)).unwrap();
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-4, "{}", p);
    }

    #[test]
    fn shape_mismatch() {
        let a = noise(3, 0.0, 1.0);
        let b = VideoTensor::new(Tensor::full(&[1, 16, 16, 3], 0.5)).unwrap();
        assert!(matches!(metrics(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn ssim_drops_with_noise() {
        let a = noise(4, 0.2, 0.6);
        let mild = VideoTensor::from_fn(2, 16, 16, 3, |f, y, x, c| {
            a.pixel(f, y, x, c) as f64 + 0.02 * (crate::rng::uniform_at(9, &[f as u64, y as u64, x as u64, c as u64]) - 0.5)
        });
        let heavy = noise(5, 0.0, 1.0);
        let (s1, s2) = (ssim(&a, &mild).unwrap(), ssim(&a, &heavy).unwrap());
        assert!(s1 > 0.9 && s2 < 0.5 && s1 > s2, "{} {}", s1, s2);
    }
}

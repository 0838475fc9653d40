use serde::{Deserialize, Serialize};

use crate::codec::VideoTensor;
use crate::conditioning::CameraMotion;
use crate::error::{Error, Result};

pub const BLOCK: usize = 8;
pub const SEARCH_RADIUS: i64 = 4;
/// Candidate displacements must keep at least this many block pixels in frame.
const MIN_OVERLAP: usize = BLOCK * BLOCK / 2;

/// Per-block `(u, v)` displacement in px/frame on a `rows × cols` grid;
/// `u` points right and `v` points down.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    rows: usize,
    cols: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(rows: usize, cols: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || u.len() != rows * cols || v.len() != rows * cols {
            return Err(Error::dim("flow_field", format!("{}x{} grid with {} / {} values", rows, cols, u.len(), v.len())));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "flow_field" });
        }
        Ok(Self { rows, cols, u, v })
    }

    /// Field with `(u, v) = f(y, x)` at each block centre (pixel coordinates).
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let (mut u, mut v) = (Vec::new(), Vec::new());
        for r in 0..rows {
            for c in 0..cols {
                let (y, x) = block_center(r, c);
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(rows, cols, u, v)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> (f64, f64) {
        let i = r * self.cols + c;
        (self.u[i], self.v[i])
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).sum::<f64>() / self.u.len() as f64
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = self.u.len() as f64;
        (self.u.iter().sum::<f64>() / n, self.v.iter().sum::<f64>() / n)
    }

    /// Divergence from a least-squares fit of a radial field `s · (p - p̄)`
    /// to the block displacements: `2s`, in 1/frame.
    pub fn divergence(&self) -> f64 {
        let (mu, mv) = self.mean();
        let my = (0..self.rows).map(|r| block_center(r, 0).0).sum::<f64>() / self.rows as f64;
        let mx = (0..self.cols).map(|c| block_center(0, c).1).sum::<f64>() / self.cols as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (y, x) = block_center(r, c);
                let (u, v) = self.at(r, c);
                num += (u - mu) * (x - mx) + (v - mv) * (y - my);
                den += (x - mx).powi(2) + (y - my).powi(2);
            }
        }
        if den == 0.0 {
            0.0
        } else {
            2.0 * num / den
        }
    }
}

fn block_center(r: usize, c: usize) -> (f64, f64) {
    let half = (BLOCK as f64 - 1.0) / 2.0;
    ((r * BLOCK) as f64 + half, (c * BLOCK) as f64 + half)
}

/// Block matching between two luma planes: for each 8×8 block of `a`, the
/// displacement within the search radius whose overlap in `b` has the
/// lowest mean absolute difference. Ties go to the shorter displacement.
pub fn block_match(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<FlowField> {
    if height < BLOCK || width < BLOCK {
        return Err(Error::Geometry(format!("optical flow needs frames of at least {}x{} px", BLOCK, BLOCK)));
    }
    let (rows, cols) = (height / BLOCK, width / BLOCK);
    let (mut us, mut vs) = (Vec::with_capacity(rows * cols), Vec::with_capacity(rows * cols));
    for r in 0..rows {
        for c in 0..cols {
            let (y0, x0) = ((r * BLOCK) as i64, (c * BLOCK) as i64);
            let mut best = (f64::INFINITY, i64::MAX, 0i64, 0i64);
            for dy in -SEARCH_RADIUS..=SEARCH_RADIUS {
                for dx in -SEARCH_RADIUS..=SEARCH_RADIUS {
                    let (mut sad, mut n) = (0.0, 0usize);
                    for y in y0..y0 + BLOCK as i64 {
                        let ty = y + dy;
                        if ty < 0 || ty >= height as i64 {
                            continue;
                        }
                        for x in x0..x0 + BLOCK as i64 {
                            let tx = x + dx;
                            if tx < 0 || tx >= width as i64 {
                                continue;
                            }
                            sad += (a[y as usize * width + x as usize] - b[ty as usize * width + tx as usize]).abs();
                            n += 1;
                        }
                    }
                    if n < MIN_OVERLAP {
                        continue;
                    }
                    let cost = sad / n as f64;
                    let d2 = dx * dx + dy * dy;
                    if cost < best.0 - 1e-12 || ((cost - best.0).abs() <= 1e-12 && d2 < best.1) {
                        best = (cost, d2, dy, dx);
                    }
                }
            }
            us.push(best.3 as f64);
            vs.push(best.2 as f64);
        }
    }
    FlowField::new(rows, cols, us, vs)
}

/// One flow field per consecutive frame pair, on luma.
pub fn optical_flow(v: &VideoTensor) -> Result<Vec<FlowField>> {
    if v.frames() < 2 {
        return Err(Error::Precondition("optical flow needs at least 2 frames".into()));
    }
    let lumas: Vec<Vec<f64>> = (0..v.frames()).map(|f| v.luma(f)).collect();
    lumas.windows(2).map(|p| block_match(&p[0], &p[1], v.height(), v.width())).collect()
}

/// Mean flow magnitude over all frame pairs and blocks.
pub fn flow_score(v: &VideoTensor) -> Result<f64> {
    Ok(mean_flow_magnitude(&optical_flow(v)?))
}

pub fn mean_flow_magnitude(flows: &[FlowField]) -> f64 {
    if flows.is_empty() {
        return 0.0;
    }
    flows.iter().map(FlowField::mean_magnitude).sum::<f64>() / flows.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionThresholds {
    /// Mean translation (px/frame) below which there is no pan or tilt.
    pub translation: f64,
    /// Divergence (1/frame) below which there is no zoom.
    pub divergence: f64,
}

impl Default for MotionThresholds {
    fn default() -> Self {
        Self {
            translation: 0.5,
            divergence: 0.02,
        }
    }
}

/// Camera motion from the mean flow and mean divergence. The camera moves
/// opposite to the content: content drifting right means the camera pans
/// left, content drifting down means it tilts up, and content expanding
/// means it zooms in. The component largest relative to its threshold wins.
pub fn camera_motion(flows: &[FlowField], th: &MotionThresholds) -> Result<CameraMotion> {
    if flows.is_empty() {
        return Err(Error::Precondition("camera motion needs at least one flow field".into()));
    }
    if !(th.translation > 0.0 && th.divergence > 0.0) {
        return Err(Error::Domain(format!("motion thresholds must be positive, got {:?}", th)));
    }
    let n = flows.len() as f64;
    let (mut u, mut v, mut d) = (0.0, 0.0, 0.0);
    for f in flows {
        let (a, b) = f.mean();
        u += a / n;
        v += b / n;
        d += f.divergence() / n;
    }
    let scores = [u.abs() / th.translation, v.abs() / th.translation, d.abs() / th.divergence];
    let (axis, &top) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("three scores");
    if top < 1.0 {
        return Ok(CameraMotion::Static);
    }
    Ok(match axis {
        0 if u > 0.0 => CameraMotion::PanLeft,
        0 => CameraMotion::PanRight,
        1 if v > 0.0 => CameraMotion::TiltUp,
        1 => CameraMotion::TiltDown,
        _ if d > 0.0 => CameraMotion::ZoomIn,
        _ => CameraMotion::ZoomOut,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::synthetic::{textured_clip, PlantedMotion, Texture};
    use proptest::prelude::*;

    #[test]
    fn static_video_scores_zero() {
        let v = textured_clip(&Texture::new(3), PlantedMotion::Static, 5, 32);
        assert_eq!(flow_score(&v).unwrap(), 0.0);
    }

    #[test]
    fn horizontal_shift_is_two_px() {
        let v = textured_clip(&Texture::new(4), PlantedMotion::Pan(2.0, 0.0), 6, 32);
        let s = flow_score(&v).unwrap();
        assert!((s - 2.0).abs() <= 0.25, "score {}", s);
        let flows = optical_flow(&v).unwrap();
        assert_eq!(camera_motion(&flows, &MotionThresholds::default()).unwrap(), CameraMotion::PanLeft);
    }

    #[test]
    fn rotated_copy_keeps_score() {
        let v = textured_clip(&Texture::new(5), PlantedMotion::Pan(2.0, 1.0), 5, 32);
        let n = v.height();
        let rot = VideoTensor::from_fn(v.frames(), n, n, v.channels(), |f, y, x, c| v.pixel(f, n - 1 - x, y, c) as f64);
        let (a, b) = (flow_score(&v).unwrap(), flow_score(&rot).unwrap());
        assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn brightness_offset_keeps_score() {
        let v = textured_clip(&Texture::new(6), PlantedMotion::Pan(-1.0, 2.0), 5, 32);
        let brighter = VideoTensor::from_fn(v.frames(), v.height(), v.width(), v.channels(), |f, y, x, c| {
            v.pixel(f, y, x, c) as f64 + 0.05
        });
        assert!((flow_score(&v).unwrap() - flow_score(&brighter).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn labels_follow_convention() {
        let th = MotionThresholds::default();
        let field = |f: &dyn Fn(f64, f64) -> (f64, f64)| vec![FlowField::from_fn(4, 4, f).unwrap()];
        assert_eq!(camera_motion(&field(&|_, _| (0.0, 0.0)), &th).unwrap(), CameraMotion::Static);
        assert_eq!(camera_motion(&field(&|_, _| (5.0, 0.0)), &th).unwrap(), CameraMotion::PanLeft);
        assert_eq!(camera_motion(&field(&|_, _| (-5.0, 0.0)), &th).unwrap(), CameraMotion::PanRight);
        assert_eq!(camera_motion(&field(&|_, _| (0.0, 3.0)), &th).unwrap(), CameraMotion::TiltUp);
        assert_eq!(camera_motion(&field(&|_, _| (0.0, -3.0)), &th).unwrap(), CameraMotion::TiltDown);
        let radial = |s: f64| move |y: f64, x: f64| (s * (x - 15.5), s * (y - 15.5));
        assert_eq!(camera_motion(&field(&radial(0.1)), &th).unwrap(), CameraMotion::ZoomIn);
        assert_eq!(camera_motion(&field(&radial(-0.1)), &th).unwrap(), CameraMotion::ZoomOut);
        assert!((field(&radial(0.1))[0].divergence() - 0.2).abs() < 1e-12);
        assert!(camera_motion(&[], &th).is_err());
    }

    #[test]
    fn planted_zoom_is_detected() {
        let th = MotionThresholds::default();
        for (rate, want) in [(1.12, CameraMotion::ZoomIn), (1.0 / 1.12, CameraMotion::ZoomOut)] {
            let v = textured_clip(&Texture::new(7), PlantedMotion::Zoom(rate), 6, 32);
            assert_eq!(camera_motion(&optical_flow(&v).unwrap(), &th).unwrap(), want);
        }
    }

    #[test]
    fn small_frames_rejected() {
        let v = VideoTensor::filled(3, 4, 4, &[0.5]);
        assert!(matches!(optical_flow(&v), Err(Error::Geometry(_))));
        assert!(matches!(optical_flow(&VideoTensor::filled(1, 8, 8, &[0.5])), Err(Error::Precondition(_))));
    }

    proptest! {
        #[test]
        fn zero_flow_is_static(t in 1e-9f64..10.0, d in 1e-9f64..10.0, rows in 1usize..5, cols in 1usize..5) {
            let f = FlowField::from_fn(rows, cols, |_, _| (0.0, 0.0)).unwrap();
            let th = MotionThresholds { translation: t, divergence: d };
            prop_assert_eq!(camera_motion(&[f], &th).unwrap(), CameraMotion::Static);
        }
    }
}

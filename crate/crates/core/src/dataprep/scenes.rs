use crate::codec::VideoTensor;
use crate::error::{Error, Result};

/// Neighbouring differences on each side that form the rolling median.
pub const SCENE_WINDOW: usize = 8;
/// Differences at or below this never cut, whatever the median.
pub const MIN_CUT_DIFF: f64 = 1e-3;

/// Mean absolute pixel difference between consecutive frames; entry `i`
/// compares frames `i` and `i + 1`.
pub fn frame_differences(v: &VideoTensor) -> Vec<f64> {
    (1..v.frames())
        .map(|f| {
            let (a, b) = (v.frame_data(f - 1), v.frame_data(f));
            a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
        })
        .collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Frame indices that start a new scene. Frame `i` is a cut when its
/// difference to frame `i - 1` exceeds `threshold` times the median of the
/// surrounding differences (up to [`SCENE_WINDOW`] on each side).
pub fn detect_scenes(v: &VideoTensor, threshold: f64) -> Result<Vec<usize>> {
    if v.frames() < 2 {
        return Err(Error::Precondition("scene detection needs at least 2 frames".into()));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Domain(format!("scene threshold {} must be positive", threshold)));
    }
    let d = frame_differences(v);
    let mut cuts = Vec::new();
    for j in 0..d.len() {
        if d[j] <= MIN_CUT_DIFF || threshold.is_infinite() {
            continue;
        }
        let lo = j.saturating_sub(SCENE_WINDOW);
        let hi = (j + 1 + SCENE_WINDOW).min(d.len());
        let around: Vec<f64> = d[lo..j].iter().chain(&d[j + 1..hi]).copied().collect();
        if d[j] > threshold * median(around) {
            cuts.push(j + 1);
        }
    }
    Ok(cuts)
}

/// `(start, len)` of each scene given the cut indices.
pub fn scene_ranges(frames: usize, cuts: &[usize]) -> Vec<(usize, usize)> {
    let mut bounds = vec![0];
    bounds.extend(cuts.iter().copied().filter(|&c| c > 0 && c < frames));
    bounds.push(frames);
    bounds.windows(2).map(|w| (w[0], w[1] - w[0])).collect()
}

use crate::codec::VideoTensor;

/// Per-frame quality scorer; plug in a learned model or use
/// [`ReferenceAesthetic`].
pub trait FrameScorer: Sync {
    fn score(&self, v: &VideoTensor, frame: usize) -> f64;
}

impl<F: Fn(&VideoTensor, usize) -> f64 + Sync> FrameScorer for F {
    fn score(&self, v: &VideoTensor, frame: usize) -> f64 {
        self(v, frame)
    }
}

/// First, middle and last frame.
pub fn sampled_frames(frames: usize) -> [usize; 3] {
    [0, frames / 2, frames.saturating_sub(1)]
}

/// Mean of the scorer over the three sampled frames.
pub fn aesthetic_score(v: &VideoTensor, scorer: &dyn FrameScorer) -> f64 {
    sampled_frames(v.frames()).iter().map(|&f| scorer.score(v, f)).sum::<f64>() / 3.0
}

/// Contrast and sharpness heuristic on luma, mapped into `[0, 10)`:
/// `10 · (1 - exp(-3 · (std + mean |gradient|)))`. Flat frames score 0.
#[derive(Copy, Clone, Debug, Default)]
pub struct ReferenceAesthetic;

impl FrameScorer for ReferenceAesthetic {
    fn score(&self, v: &VideoTensor, frame: usize) -> f64 {
        let (h, w) = (v.height(), v.width());
        let l = v.luma(frame);
        let n = l.len() as f64;
        let mean = l.iter().sum::<f64>() / n;
        let std = (l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let (mut grad, mut pairs) = (0.0, 0usize);
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    grad += (l[y * w + x + 1] - l[y * w + x]).abs();
                    pairs += 1;
                }
                if y + 1 < h {
                    grad += (l[(y + 1) * w + x] - l[y * w + x]).abs();
                    pairs += 1;
                }
            }
        }
        let grad = if pairs == 0 { 0.0 } else { grad / pairs as f64 };
        10.0 * (1.0 - (-3.0 * (std + grad)).exp())
    }
}

/// Fraction of a frame's area covered by text; plug in an OCR detector or
/// use [`ReferenceTextDetector`].
pub trait TextDetector: Sync {
    fn text_area(&self, v: &VideoTensor, frame: usize) -> f64;
}

impl<F: Fn(&VideoTensor, usize) -> f64 + Sync> TextDetector for F {
    fn text_area(&self, v: &VideoTensor, frame: usize) -> f64 {
        self(v, frame)
    }
}

/// Flags blocks that are high-contrast and dense in horizontal edges (luma
/// jumps between vertically adjacent pixels), the signature of rows of text.
#[derive(Clone, Debug)]
pub struct ReferenceTextDetector {
    pub block: usize,
    /// Minimum luma range inside a block.
    pub min_contrast: f64,
    /// Luma jump that counts as an edge.
    pub edge_step: f64,
    /// Minimum share of vertical neighbour pairs that are edges.
    pub min_edge_density: f64,
}

impl Default for ReferenceTextDetector {
    fn default() -> Self {
        Self {
            block: 4,
            min_contrast: 0.5,
            edge_step: 0.3,
            min_edge_density: 0.5,
        }
    }
}

impl TextDetector for ReferenceTextDetector {
    fn text_area(&self, v: &VideoTensor, frame: usize) -> f64 {
        let (h, w) = (v.height(), v.width());
        let l = v.luma(frame);
        let bs = self.block.max(2);
        let mut flagged = 0usize;
        for by in (0..h).step_by(bs) {
            for bx in (0..w).step_by(bs) {
                let (y1, x1) = ((by + bs).min(h), (bx + bs).min(w));
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                let (mut edges, mut pairs) = (0usize, 0usize);
                for y in by..y1 {
                    for x in bx..x1 {
                        let p = l[y * w + x];
                        lo = lo.min(p);
                        hi = hi.max(p);
                        if y + 1 < y1 {
                            pairs += 1;
                            if (l[(y + 1) * w + x] - p).abs() > self.edge_step {
                                edges += 1;
                            }
                        }
                    }
                }
                if pairs > 0 && hi - lo >= self.min_contrast && edges as f64 >= self.min_edge_density * pairs as f64 {
                    flagged += (y1 - by) * (x1 - bx);
                }
            }
        }
        flagged as f64 / (h * w) as f64
    }
}

/// Flagged text area over frame area, averaged over the three sampled frames.
pub fn ocr_area_ratio(v: &VideoTensor, detector: &dyn TextDetector) -> f64 {
    sampled_frames(v.frames()).iter().map(|&f| detector.text_area(v, f).clamp(0.0, 1.0)).sum::<f64>() / 3.0
}

/// The OCR filter keeps a clip iff its text ratio is at most `theta`.
pub fn passes_ocr(ratio: f64, theta: f64) -> bool {
    ratio <= theta
}

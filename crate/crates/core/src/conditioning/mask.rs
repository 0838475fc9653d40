use std::fmt;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-frame flags; `true` marks an unmasked (conditioning) frame that is
/// held clean at timestep 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FrameMask(Vec<bool>);

impl FrameMask {
    pub fn new(conditioning: Vec<bool>) -> Self {
        Self(conditioning)
    }

    /// No conditioning frames.
    pub fn none(frames: usize) -> Self {
        Self(vec![false; frames])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_conditioning(&self, frame: usize) -> bool {
        self.0.get(frame).copied().unwrap_or(false)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn conditioning_count(&self) -> usize {
        self.0.iter().filter(|&&c| c).count()
    }

    pub fn has_conditioning(&self) -> bool {
        self.0.iter().any(|&c| c)
    }

    /// Frames that are generated (and scored by the loss).
    pub fn generated(&self) -> Vec<bool> {
        self.0.iter().map(|&c| !c).collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum MaskPattern {
    First1,
    FirstK(usize),
    Last1,
    LastK(usize),
    FirstLastK(usize),
    /// `k` conditioning frames at uniformly random positions, chosen by the
    /// stream that produced the pattern.
    Random(usize),
    NoMask,
}

impl MaskPattern {
    pub const MASKED_KINDS: usize = 6;

    /// Pattern index for frequency bookkeeping; `NoMask` is 6.
    pub fn kind(&self) -> usize {
        match self {
            MaskPattern::First1 => 0,
            MaskPattern::FirstK(_) => 1,
            MaskPattern::Last1 => 2,
            MaskPattern::LastK(_) => 3,
            MaskPattern::FirstLastK(_) => 4,
            MaskPattern::Random(_) => 5,
            MaskPattern::NoMask => 6,
        }
    }
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskPattern::First1 => write!(f, "first1"),
            MaskPattern::FirstK(k) => write!(f, "first{}", k),
            MaskPattern::Last1 => write!(f, "last1"),
            MaskPattern::LastK(k) => write!(f, "last{}", k),
            MaskPattern::FirstLastK(k) => write!(f, "firstlast{}", k),
            MaskPattern::Random(k) => write!(f, "random{}", k),
            MaskPattern::NoMask => write!(f, "none"),
        }
    }
}

/// Largest `k` drawn for the K-patterns: `ceil(T / 4)`.
pub fn max_k(frames: usize) -> usize {
    frames.div_ceil(4).max(1)
}

fn pattern_mask(pattern: MaskPattern, frames: usize, r: &mut Rng) -> FrameMask {
    let mut m = vec![false; frames];
    // leave at least one generated frame
    let cap = |k: usize| k.min(frames.saturating_sub(1)).max(1);
    match pattern {
        MaskPattern::First1 => m[0] = true,
        MaskPattern::Last1 => m[frames - 1] = true,
        MaskPattern::FirstK(k) => m[..cap(k)].iter_mut().for_each(|v| *v = true),
        MaskPattern::LastK(k) => m[frames - cap(k)..].iter_mut().for_each(|v| *v = true),
        MaskPattern::FirstLastK(k) => {
            let k = (k.min((frames - 1) / 2)).max(1);
            m[..k].iter_mut().for_each(|v| *v = true);
            if frames > 2 {
                m[frames - k..].iter_mut().for_each(|v| *v = true);
            }
        }
        MaskPattern::Random(k) => {
            for i in index::sample(r, frames, cap(k)) {
                m[i] = true;
            }
        }
        MaskPattern::NoMask => {}
    }
    FrameMask(m)
}

/// With probability `1 - mask_prob` returns `NoMask`; otherwise one of the
/// six conditioning patterns, uniformly, with `k` uniform in `1..=ceil(T/4)`.
/// Single-frame clips have nothing to condition on and always get `NoMask`.
pub fn sample_pattern(r: &mut Rng, frames: usize, mask_prob: f64) -> Result<(MaskPattern, FrameMask)> {
    if !(0.0..=1.0).contains(&mask_prob) {
        return Err(Error::Domain(format!("mask_prob must lie in [0, 1], got {}", mask_prob)));
    }
    if frames == 0 {
        return Err(Error::Argument("mask needs at least one frame".into()));
    }
    let masked = r.random::<f64>() < mask_prob;
    if !masked || frames < 2 {
        return Ok((MaskPattern::NoMask, FrameMask::none(frames)));
    }
    let k = r.random_range(1..=max_k(frames));
    let pattern = match r.random_range(0..MaskPattern::MASKED_KINDS) {
        0 => MaskPattern::First1,
        1 => MaskPattern::FirstK(k),
        2 => MaskPattern::Last1,
        3 => MaskPattern::LastK(k),
        4 => MaskPattern::FirstLastK(k),
        _ => MaskPattern::Random(k),
    };
    let mask = pattern_mask(pattern, frames, r);
    Ok((pattern, mask))
}

/// Conditioning frames get timestep 0, the rest keep `t`.
pub fn assign_timesteps(mask: &FrameMask, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("timestep {} outside [0, 1]", t)));
    }
    Ok(mask.0.iter().map(|&c| if c { 0.0 } else { t }).collect())
}

/// Parses `none`, `first:K`, `last:K`, `firstlast:K` or `frames:i,j,...`
/// into a mask over `frames` frames.
pub fn parse_condition(spec: &str, frames: usize) -> Result<FrameMask> {
    let spec = spec.trim();
    if spec == "none" {
        return Ok(FrameMask::none(frames));
    }
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| Error::Argument(format!("condition `{}` must look like kind:value", spec)))?;
    let count = |a: &str| -> Result<usize> {
        let k: usize = a.trim().parse().map_err(|_| Error::Argument(format!("bad frame count `{}`", a)))?;
        if k == 0 || k > frames {
            return Err(Error::Argument(format!("frame count {} out of range for {} frames", k, frames)));
        }
        Ok(k)
    };
    let mut m = vec![false; frames];
    match kind.trim() {
        "first" => m[..count(arg)?].iter_mut().for_each(|v| *v = true),
        "last" => {
            let k = count(arg)?;
            m[frames - k..].iter_mut().for_each(|v| *v = true)
        }
        "firstlast" => {
            let k = count(arg)?;
            if 2 * k > frames {
                return Err(Error::Argument(format!("firstlast:{} needs at least {} frames", k, 2 * k)));
            }
            m[..k].iter_mut().for_each(|v| *v = true);
            m[frames - k..].iter_mut().for_each(|v| *v = true);
        }
        "frames" => {
            for part in arg.split(',') {
                let i: usize = part.trim().parse().map_err(|_| Error::Argument(format!("bad frame index `{}`", part)))?;
                if i >= frames {
                    return Err(Error::Argument(format!("frame {} out of range for {} frames", i, frames)));
                }
                m[i] = true;
            }
        }
        other => return Err(Error::Argument(format!("unknown condition kind `{}`", other))),
    }
    Ok(FrameMask(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn assign_examples() {
        let m = FrameMask::new(vec![true, false, false]);
        assert_eq!(assign_timesteps(&m, 0.7).unwrap(), vec![0.0, 0.7, 0.7]);
        assert_eq!(assign_timesteps(&FrameMask::none(3), 0.4).unwrap(), vec![0.4; 3]);
        assert_eq!(assign_timesteps(&FrameMask::new(vec![true; 4]), 0.9).unwrap(), vec![0.0; 4]);
        assert!(matches!(assign_timesteps(&m, 1.2), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_prob_never_masks() {
        let mut r = rng::stream(1, &[]);
        for _ in 0..1000 {
            let (p, m) = sample_pattern(&mut r, 9, 0.0).unwrap();
            assert_eq!(p, MaskPattern::NoMask);
            assert!(!m.has_conditioning());
        }
    }

    #[test]
    fn masked_fraction_and_pattern_mix() {
        let mut r = rng::stream(2, &[]);
        let n = 100_000;
        let mut kinds = [0usize; 7];
        for _ in 0..n {
            let (p, _) = sample_pattern(&mut r, 8, 0.5).unwrap();
            kinds[p.kind()] += 1;
        }
        let masked = n - kinds[6];
        assert!((masked as f64 / n as f64 - 0.5).abs() < 0.01);
        for &c in &kinds[..6] {
            assert!((c as f64 / masked as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn single_frame_is_never_conditioned() {
        let mut r = rng::stream(3, &[]);
        let (p, m) = sample_pattern(&mut r, 1, 1.0).unwrap();
        assert_eq!(p, MaskPattern::NoMask);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn parse_specs() {
        assert_eq!(parse_condition("first:2", 4).unwrap().as_slice(), &[true, true, false, false]);
        assert_eq!(parse_condition("last:1", 3).unwrap().as_slice(), &[false, false, true]);
        assert_eq!(parse_condition("frames:0,2", 3).unwrap().as_slice(), &[true, false, true]);
        assert_eq!(parse_condition("firstlast:1", 3).unwrap().as_slice(), &[true, false, true]);
        assert!(!parse_condition("none", 3).unwrap().has_conditioning());
        for bad in ["frames:0,5", "first:9", "side:1", "first", "frames:x"] {
            assert!(matches!(parse_condition(bad, 5), Err(Error::Argument(_))), "{}", bad);
        }
    }

    proptest! {
        #[test]
        fn sampled_masks_keep_a_generated_frame(seed in any::<u64>(), frames in 2usize..40) {
            let mut r = rng::stream(seed, &[]);
            let (p, m) = sample_pattern(&mut r, frames, 1.0).unwrap();
            prop_assert_eq!(m.len(), frames);
            prop_assert!(m.has_conditioning(), "{}", p);
            prop_assert!(m.conditioning_count() < frames);
        }

        #[test]
        fn conditioning_frames_get_zero(bits in proptest::collection::vec(any::<bool>(), 1..30), t in 0.0f64..=1.0) {
            let m = FrameMask::new(bits.clone());
            let ts = assign_timesteps(&m, t).unwrap();
            for (c, v) in bits.iter().zip(&ts) {
                prop_assert_eq!(*v, if *c { 0.0 } else { t });
            }
        }
    }
}

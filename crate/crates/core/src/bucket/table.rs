use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Toy pixel sizes for the named resolutions.
pub const RESOLUTIONS: [(&str, usize); 5] = [("144p", 8), ("240p", 16), ("360p", 24), ("480p", 32), ("720p", 48)];

/// Pixel short side for a label like `240p`, or a bare pixel count.
pub fn resolution_px(label: &str) -> Result<usize> {
    let label = label.trim();
    if let Some(&(_, px)) = RESOLUTIONS.iter().find(|(l, _)| *l == label) {
        return Ok(px);
    }
    match label.parse::<usize>() {
        Ok(px) if px > 0 => Ok(px),
        _ => Err(Error::Config(format!("unknown resolution `{}`", label))),
    }
}

/// Label for a pixel short side, falling back to the number itself.
pub fn resolution_label(px: usize) -> String {
    RESOLUTIONS
        .iter()
        .find(|(_, p)| *p == px)
        .map_or_else(|| px.to_string(), |(l, _)| l.to_string())
}

/// Width:height ratio from the supported list.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Aspect {
    pub w: u32,
    pub h: u32,
}

impl Aspect {
    pub const SUPPORTED: [Aspect; 5] = [
        Aspect { w: 1, h: 1 },
        Aspect { w: 4, h: 3 },
        Aspect { w: 3, h: 4 },
        Aspect { w: 16, h: 9 },
        Aspect { w: 9, h: 16 },
    ];

    pub fn ratio(&self) -> f64 {
        self.w as f64 / self.h as f64
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.w, self.h)
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unsupported aspect `{}`", s));
        let (w, h) = s.trim().split_once(':').ok_or_else(bad)?;
        let a = Aspect {
            w: w.trim().parse().map_err(|_| bad())?,
            h: h.trim().parse().map_err(|_| bad())?,
        };
        if Self::SUPPORTED.contains(&a) {
            Ok(a)
        } else {
            Err(bad())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    /// Short side in pixels.
    pub resolution: usize,
    pub frames: usize,
    pub aspect: Aspect,
    pub keep_prob: f64,
    pub batch_size: usize,
}

impl Bucket {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.frames == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("bucket {} needs positive resolution, frames and batch size", self)));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(Error::Config(format!("bucket {} keep_prob outside [0, 1]", self)));
        }
        Ok(())
    }

    /// `(height, width)` in pixels: the short side is the resolution and the
    /// long side follows the aspect, rounded to a multiple of 8.
    pub fn dims(&self) -> (usize, usize) {
        let long = |r: f64| (((self.resolution as f64 * r) / 8.0).round() as usize * 8).max(self.resolution);
        let ratio = self.aspect.ratio();
        if ratio >= 1.0 {
            (self.resolution, long(ratio))
        } else {
            (long(1.0 / ratio), self.resolution)
        }
    }

    /// Compute proxy of one batch: `frames × (h/8 · w/8) × batch_size`.
    pub fn batch_tokens(&self) -> usize {
        let (h, w) = self.dims();
        self.frames * (h / 8) * (w / 8) * self.batch_size
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {}, {}, {}, {}",
            resolution_label(self.resolution),
            self.frames,
            self.aspect,
            self.keep_prob,
            self.batch_size
        )
    }
}

impl FromStr for Bucket {
    type Err = Error;

    /// `resolution, frames, aspect, keep_prob, batch_size`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(Error::Config(format!("bucket row `{}` needs 5 fields", s)));
        }
        let num = |v: &str, what: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("bucket row `{}`: bad {} `{}`", s, what, v)))
        };
        let b = Bucket {
            resolution: resolution_px(parts[0])?,
            frames: num(parts[1], "frames")?,
            aspect: parts[2].parse()?,
            keep_prob: parts[3]
                .parse()
                .map_err(|_| Error::Config(format!("bucket row `{}`: bad keep_prob", s)))?,
            batch_size: num(parts[4], "batch_size")?,
        };
        b.validate()?;
        Ok(b)
    }
}

/// The `[buckets]` config section: `rows = ["240p, 16, 1:1, 1.0, 4", ...]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketSection {
    pub rows: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketTable {
    pub buckets: Vec<Bucket>,
}

impl BucketTable {
    pub fn new(buckets: Vec<Bucket>) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::Config("bucket table is empty".into()));
        }
        for b in &buckets {
            b.validate()?;
        }
        Ok(Self { buckets })
    }

    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        Self::new(rows.iter().map(|r| r.as_ref().parse()).collect::<Result<Vec<_>>>()?)
    }

    pub fn rows(&self) -> Vec<String> {
        self.buckets.iter().map(|b| b.to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Toy table over the 144p-480p range, square and landscape.
    pub fn toy() -> Self {
        Self::from_rows(&[
            "144p, 1, 1:1, 1.0, 8",
            "144p, 16, 1:1, 1.0, 4",
            "240p, 1, 1:1, 1.0, 8",
            "240p, 16, 1:1, 1.0, 4",
            "240p, 32, 1:1, 0.8, 2",
            "240p, 16, 16:9, 1.0, 2",
            "360p, 16, 1:1, 0.7, 2",
            "480p, 16, 1:1, 0.5, 1",
        ])
        .expect("valid toy table")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print_rows() {
        let b: Bucket = "240p, 16, 16:9, 0.5, 4".parse().unwrap();
        assert_eq!(b.resolution, 16);
        assert_eq!(b.aspect, Aspect { w: 16, h: 9 });
        assert_eq!(b.to_string(), "240p, 16, 16:9, 0.5, 4");
        assert_eq!(b.dims(), (16, 32));
        let tall: Bucket = "24, 8, 3:4, 1, 1".parse().unwrap();
        assert_eq!(tall.dims(), (32, 24));
        for bad in ["240p, 16, 2:1, 1, 1", "240p, 16, 1:1, 1.5, 1", "240p, 0, 1:1, 1, 1", "999q, 1, 1:1, 1, 1", "240p, 16"] {
            assert!(matches!(bad.parse::<Bucket>(), Err(Error::Config(_))), "{}", bad);
        }
        assert!(BucketTable::new(vec![]).is_err());
    }

    #[test]
    fn batch_tokens_are_linear_in_batch_size() {
        let b: Bucket = "240p, 16, 1:1, 1, 2".parse().unwrap();
        let d = Bucket { batch_size: 4, ..b.clone() };
        assert_eq!(b.batch_tokens(), 16 * 2 * 2 * 2);
        assert_eq!(d.batch_tokens(), 2 * b.batch_tokens());
    }
}

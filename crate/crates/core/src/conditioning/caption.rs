use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Camera-motion vocabulary appended to captions.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum CameraMotion {
    Static,
    PanLeft,
    PanRight,
    TiltUp,
    TiltDown,
    ZoomIn,
    ZoomOut,
}

impl CameraMotion {
    pub const ALL: [CameraMotion; 7] = [
        CameraMotion::Static,
        CameraMotion::PanLeft,
        CameraMotion::PanRight,
        CameraMotion::TiltUp,
        CameraMotion::TiltDown,
        CameraMotion::ZoomIn,
        CameraMotion::ZoomOut,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CameraMotion::Static => "static",
            CameraMotion::PanLeft => "pan left",
            CameraMotion::PanRight => "pan right",
            CameraMotion::TiltUp => "tilt up",
            CameraMotion::TiltDown => "tilt down",
            CameraMotion::ZoomIn => "zoom in",
            CameraMotion::ZoomOut => "zoom out",
        }
    }
}

impl fmt::Display for CameraMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CameraMotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown camera motion `{}`", s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCaption {
    pub caption: String,
    pub aesthetic: f64,
    pub motion: f64,
    pub camera: Option<CameraMotion>,
}

impl ScoredCaption {
    pub fn new(caption: impl Into<String>, aesthetic: f64, motion: f64, camera: Option<CameraMotion>) -> Result<Self> {
        if !aesthetic.is_finite() || !motion.is_finite() {
            return Err(Error::Domain(format!("scores must be finite, got {} and {}", aesthetic, motion)));
        }
        Ok(Self {
            caption: caption.into(),
            aesthetic,
            motion,
            camera,
        })
    }
}

const AES: &str = " aesthetic score: ";
const MOTION: &str = ", motion score: ";
const CAMERA: &str = ", camera motion: ";

/// `<caption> aesthetic score: <a>, motion score: <m>[, camera motion: <label>]`.
/// Scores use the shortest decimal that round-trips, so `10.0` renders as `10`.
pub fn format_caption(c: &ScoredCaption) -> String {
    let mut s = format!("{}{}{}{}{}", c.caption, AES, c.aesthetic, MOTION, c.motion);
    if let Some(cam) = c.camera {
        s.push_str(CAMERA);
        s.push_str(cam.as_str());
    }
    s
}

/// Inverse of [`format_caption`]. The score clause is located from the
/// right, so captions may themselves contain the clause text.
pub fn parse_caption(s: &str) -> Result<ScoredCaption> {
    let bad = || Error::Argument(format!("not a scored caption: `{}`", s));
    let at = s.rfind(AES).ok_or_else(bad)?;
    let caption = &s[..at];
    let rest = &s[at + AES.len()..];
    let (aes, rest) = rest.split_once(MOTION).ok_or_else(bad)?;
    let (motion, camera) = match rest.split_once(CAMERA) {
        Some((m, cam)) => (m, Some(cam.parse::<CameraMotion>()?)),
        None => (rest, None),
    };
    let num = |v: &str| -> Result<f64> {
        let x: f64 = v.parse().map_err(|_| bad())?;
        if x.is_finite() && x.to_string() == v {
            Ok(x)
        } else {
            Err(bad())
        }
    };
    ScoredCaption::new(caption, num(aes)?, num(motion)?, camera)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_format() {
        let c = ScoredCaption::new("A cat.", 5.5, 10.0, Some(CameraMotion::PanLeft)).unwrap();
        assert_eq!(
            format_caption(&c),
            "A cat. aesthetic score: 5.5, motion score: 10, camera motion: pan left"
        );
        let c = ScoredCaption { camera: None, ..c };
        assert_eq!(format_caption(&c), "A cat. aesthetic score: 5.5, motion score: 10");
    }

    #[test]
    fn parse_rejects_garbage() {
        for s in ["plain", "x aesthetic score: 1", "x aesthetic score: a, motion score: 2", "x aesthetic score: 1, motion score: 2, camera motion: spin"] {
            assert!(parse_caption(s).is_err(), "{}", s);
        }
        assert!(ScoredCaption::new("x", f64::NAN, 1.0, None).is_err());
    }

    fn camera() -> impl Strategy<Value = Option<CameraMotion>> {
        prop_oneof![Just(None), (0usize..7).prop_map(|i| Some(CameraMotion::ALL[i]))]
    }

    proptest! {
        #[test]
        fn round_trip(text in ".{0,40}", a in -1e6f64..1e6, m in -1e6f64..1e6, cam in camera()) {
            let c = ScoredCaption::new(text, a, m, cam).unwrap();
            prop_assert_eq!(parse_caption(&format_caption(&c)).unwrap(), c);
        }
    }
}

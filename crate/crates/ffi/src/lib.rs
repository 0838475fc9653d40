//! C ABI over the toolkit: opaque handles for videos, codecs and models,
//! integer status codes, and a thread-local message for the last failure.
//!
//! Every function returns an [`OskStatus`]. Handles returned through out
//! pointers are owned by the caller and released with the matching
//! `*_free`. Panics never cross the boundary; they surface as
//! `OSK_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use open_sora_kit::codec::{metrics, CausalCodec, VideoTensor};
use open_sora_kit::conditioning::{format_caption, CameraMotion, ScoredCaption};
use open_sora_kit::numerics::Tensor;
use open_sora_kit::pipeline::{generate, ConditionInput, GenerateRequest};
use open_sora_kit::stdit::Stdit;
use open_sora_kit::Error;

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OskStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Domain = 4,
    Precondition = 5,
    NonFinite = 6,
    Io = 7,
    Format = 8,
    Config = 9,
    BufferTooSmall = 10,
    Internal = 11,
}

/// Camera label codes for [`osk_format_caption`]; `None` leaves it off.
#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OskCamera {
    None = -1,
    Static = 0,
    PanLeft = 1,
    PanRight = 2,
    TiltUp = 3,
    TiltDown = 4,
    ZoomIn = 5,
    ZoomOut = 6,
}

/// Video tensor `[frames, height, width, channels]` with values in `[0, 1]`.
pub struct OskVideo(VideoTensor);

/// Trained latent codec.
pub struct OskCodec(CausalCodec);

/// Diffusion model loaded from a checkpoint.
pub struct OskModel(Stdit);

#[repr(C)]
pub struct OskGenerateParams {
    /// NUL-terminated UTF-8 prompt.
    pub prompt: *const c_char,
    pub frames: usize,
    /// Square side in pixels; a multiple of 8.
    pub resolution: usize,
    pub fps: f64,
    pub steps: usize,
    pub seed: u64,
    pub text_max_len: usize,
    /// Mask spec such as `first:1`, or NULL for unconditioned sampling.
    pub condition: *const c_char,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> OskStatus {
    match e {
        Error::Dimension { .. } | Error::Geometry(_) => OskStatus::Dimension,
        Error::NonFinite { .. } | Error::DegenerateStats { .. } => OskStatus::NonFinite,
        Error::Domain(_) => OskStatus::Domain,
        Error::Precondition(_) => OskStatus::Precondition,
        Error::Argument(_) => OskStatus::InvalidArgument,
        Error::Config(_) => OskStatus::Config,
        Error::Format { .. } | Error::Csv(_) => OskStatus::Format,
        Error::Io { .. } => OskStatus::Io,
        Error::Evaluation(_) => OskStatus::Internal,
    }
}

struct Fail(OskStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OskStatus::NullPointer, format!("{} is NULL", what))
}

/// Runs `f`, recording any failure or panic as the last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OskStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OskStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {}", msg));
            OskStatus::Internal
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(OskStatus::InvalidArgument, format!("{} is not valid UTF-8", what)))
}

unsafe fn c_path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    c_str(p, what).map(PathBuf::from)
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn osk_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn osk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a video from `frames·height·width·channels` floats in frame-major,
/// channel-last order.
///
/// # Safety
/// `data` must point to that many floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn osk_video_new(
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: *const f32,
    out: *mut *mut OskVideo,
) -> OskStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Fail(OskStatus::Dimension, "video size overflows".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let t = Tensor::new(vec![frames, height, width, channels], values)?;
        *out = boxed(OskVideo(VideoTensor::new(t)?));
        Ok(())
    })
}

/// Reads a `.vten` video file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn osk_video_read(path: *const c_char, out: *mut *mut OskVideo) -> OskStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = c_path(path, "path")?;
        *out = boxed(OskVideo(VideoTensor::read(path)?));
        Ok(())
    })
}

/// # Safety
/// `video` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn osk_video_write(video: *const OskVideo, path: *const c_char) -> OskStatus {
    guard(|| {
        let v = handle(video, "video")?;
        v.0.write(c_path(path, "path")?)?;
        Ok(())
    })
}

/// Writes `[frames, height, width, channels]` into `shape`.
///
/// # Safety
/// `video` must be a live handle; `shape` must point to 4 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn osk_video_shape(video: *const OskVideo, shape: *mut usize) -> OskStatus {
    guard(|| {
        let v = handle(video, "video")?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        let dims = [v.0.frames(), v.0.height(), v.0.width(), v.0.channels()];
        ptr::copy_nonoverlapping(dims.as_ptr(), shape, 4);
        Ok(())
    })
}

/// Copies the pixel values into `buf`, which must hold at least the
/// product of the shape.
///
/// # Safety
/// `video` must be a live handle; `buf` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn osk_video_data(video: *const OskVideo, buf: *mut f32, len: usize) -> OskStatus {
    guard(|| {
        let v = handle(video, "video")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let data = v.0.tensor().data();
        if len < data.len() {
            return Err(Fail(OskStatus::BufferTooSmall, format!("need {} floats, got {}", data.len(), len)));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// # Safety
/// `video` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn osk_video_free(video: *mut OskVideo) {
    if !video.is_null() {
        drop(Box::from_raw(video));
    }
}

/// Loads a codec directory written by `codec-train`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn osk_codec_load(dir: *const c_char, out: *mut *mut OskCodec) -> OskStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(OskCodec(CausalCodec::load(c_path(dir, "dir")?)?));
        Ok(())
    })
}

/// Encodes and decodes `video`, returning the reconstruction.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn osk_codec_roundtrip(codec: *const OskCodec, video: *const OskVideo, out: *mut *mut OskVideo) -> OskStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (c, v) = (handle(codec, "codec")?, handle(video, "video")?);
        *out = boxed(OskVideo(c.0.roundtrip(&v.0)?));
        Ok(())
    })
}

/// # Safety
/// `codec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn osk_codec_free(codec: *mut OskCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Loads the model from a training checkpoint directory (the one holding
/// `model/`).
///
/// # Safety
/// `checkpoint` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn osk_model_load(checkpoint: *const c_char, out: *mut *mut OskModel) -> OskStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dir = c_path(checkpoint, "checkpoint")?;
        *out = boxed(OskModel(Stdit::load(dir.join("model"))?));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn osk_model_free(model: *mut OskModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Samples a video. `condition_video` supplies the conditioning frames when
/// `params.condition` is set and must be NULL otherwise.
///
/// # Safety
/// Handles must be live, `params` readable with valid strings, and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn osk_generate(
    model: *const OskModel,
    codec: *const OskCodec,
    params: *const OskGenerateParams,
    condition_video: *const OskVideo,
    out: *mut *mut OskVideo,
) -> OskStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (m, c, p) = (handle(model, "model")?, handle(codec, "codec")?, handle(params, "params")?);
        let condition = match (p.condition.is_null(), condition_video.is_null()) {
            (true, true) => None,
            (false, false) => Some(ConditionInput {
                spec: c_str(p.condition, "params.condition")?.to_string(),
                video: (*condition_video).0.clone(),
            }),
            _ => {
                return Err(Fail(
                    OskStatus::InvalidArgument,
                    "params.condition and condition_video must both be set or both be NULL".into(),
                ))
            }
        };
        let req = GenerateRequest {
            prompt: c_str(p.prompt, "params.prompt")?.to_string(),
            frames: p.frames,
            resolution: p.resolution,
            fps: p.fps,
            steps: p.steps,
            seed: p.seed,
            text_max_len: p.text_max_len,
            condition,
        };
        *out = boxed(OskVideo(generate(&m.0, &c.0, &req)?));
        Ok(())
    })
}

/// PSNR (dB) and SSIM between two videos of equal shape.
///
/// # Safety
/// Handles must be live; `psnr` and `ssim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn osk_quality(a: *const OskVideo, b: *const OskVideo, psnr: *mut f64, ssim: *mut f64) -> OskStatus {
    guard(|| {
        let (a, b) = (handle(a, "a")?, handle(b, "b")?);
        let (psnr, ssim) = (out_ptr(psnr, "psnr")?, out_ptr(ssim, "ssim")?);
        let q = metrics(&a.0, &b.0)?;
        *psnr = q.psnr;
        *ssim = q.ssim;
        Ok(())
    })
}

/// Formats a caption with appended scores into `buf` (NUL-terminated).
/// `written` receives the string length in bytes, also when the buffer is
/// too small.
///
/// # Safety
/// `caption` must be a NUL-terminated string, `buf` NULL or `len` writable
/// bytes, and `written` writable.
#[no_mangle]
pub unsafe extern "C" fn osk_format_caption(
    caption: *const c_char,
    aesthetic: f64,
    motion: f64,
    camera: i32,
    buf: *mut c_char,
    len: usize,
    written: *mut usize,
) -> OskStatus {
    guard(|| {
        let written = out_ptr(written, "written")?;
        // plain int so an out-of-range code from C is an error, not UB
        let camera = match camera {
            c if c == OskCamera::None as i32 => None,
            c if c == OskCamera::Static as i32 => Some(CameraMotion::Static),
            c if c == OskCamera::PanLeft as i32 => Some(CameraMotion::PanLeft),
            c if c == OskCamera::PanRight as i32 => Some(CameraMotion::PanRight),
            c if c == OskCamera::TiltUp as i32 => Some(CameraMotion::TiltUp),
            c if c == OskCamera::TiltDown as i32 => Some(CameraMotion::TiltDown),
            c if c == OskCamera::ZoomIn as i32 => Some(CameraMotion::ZoomIn),
            c if c == OskCamera::ZoomOut as i32 => Some(CameraMotion::ZoomOut),
            c => return Err(Fail(OskStatus::InvalidArgument, format!("unknown camera code {}", c))),
        };
        let s = format_caption(&ScoredCaption::new(c_str(caption, "caption")?, aesthetic, motion, camera)?);
        *written = s.len();
        if buf.is_null() || len <= s.len() {
            return Err(Fail(OskStatus::BufferTooSmall, format!("need {} bytes, got {}", s.len() + 1, len)));
        }
        ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, s.len());
        *buf.add(s.len()) = 0;
        Ok(())
    })
}

use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use open_sora_kit::codec::{CausalCodec, CodecConfig};
use open_sora_kit::stdit::{Stdit, StditConfig};
use open_sora_kit_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        osk_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn video(frames: usize, side: usize) -> *mut OskVideo {
    let data: Vec<f32> = (0..frames * side * side * 3).map(|i| (i % 17) as f32 / 17.0).collect();
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { osk_video_new(frames, side, side, 3, data.as_ptr(), &mut v) }, OskStatus::Ok);
    v
}

#[test]
fn video_roundtrips_through_handles_and_files() {
    let v = video(2, 8);
    let mut shape = [0usize; 4];
    unsafe {
        assert_eq!(osk_video_shape(v, shape.as_mut_ptr()), OskStatus::Ok);
        assert_eq!(shape, [2, 8, 8, 3]);
        let mut small = vec![0f32; 10];
        assert_eq!(osk_video_data(v, small.as_mut_ptr(), small.len()), OskStatus::BufferTooSmall);
        let mut buf = vec![0f32; 384];
        assert_eq!(osk_video_data(v, buf.as_mut_ptr(), buf.len()), OskStatus::Ok);
        assert_eq!(buf[18], 1.0 / 17.0);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("v.vten").to_str().unwrap()).unwrap();
        assert_eq!(osk_video_write(v, path.as_ptr()), OskStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(osk_video_read(path.as_ptr(), &mut back), OskStatus::Ok);
        let (mut psnr, mut ssim) = (0.0, 0.0);
        assert_eq!(osk_quality(v, back, &mut psnr, &mut ssim), OskStatus::Ok);
        assert!((ssim - 1.0).abs() < 1e-9);
        osk_video_free(back);
        osk_video_free(v);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(osk_video_new(1, 2, 2, 3, ptr::null(), &mut v), OskStatus::NullPointer);
        assert!(last_error().contains("data"));
        let bad = CString::new("/nonexistent/clip.vten").unwrap();
        assert_eq!(osk_video_read(bad.as_ptr(), &mut v), OskStatus::Io);
        assert!(last_error().contains("/nonexistent/clip.vten"));
        assert!(v.is_null());
        let values = [2.0f32; 12];
        assert_eq!(osk_video_new(1, 2, 2, 3, values.as_ptr(), &mut v), OskStatus::Domain);
        osk_video_free(ptr::null_mut());
        assert_eq!(osk_last_error(ptr::null_mut(), 0), last_error().len());
    }
}

#[test]
fn caption_formatting_and_buffer_sizes() {
    let cap = CString::new("a cat").unwrap();
    let mut buf = [0 as c_char; 128];
    let mut n = 0usize;
    unsafe {
        let s = osk_format_caption(cap.as_ptr(), 5.5, 10.0, OskCamera::PanLeft as i32, buf.as_mut_ptr(), buf.len(), &mut n);
        assert_eq!(s, OskStatus::Ok);
        let text = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(text, "a cat aesthetic score: 5.5, motion score: 10, camera motion: pan left");
        assert_eq!(n, text.len());
        let mut tiny = [0 as c_char; 4];
        let s = osk_format_caption(cap.as_ptr(), 5.5, 10.0, -1, tiny.as_mut_ptr(), tiny.len(), &mut n);
        assert_eq!(s, OskStatus::BufferTooSmall);
        assert_eq!(n, "a cat aesthetic score: 5.5, motion score: 10".len());
        let s = osk_format_caption(cap.as_ptr(), 5.5, 10.0, 42, buf.as_mut_ptr(), buf.len(), &mut n);
        assert_eq!(s, OskStatus::InvalidArgument);
        let s = osk_format_caption(cap.as_ptr(), f64::NAN, 10.0, -1, buf.as_mut_ptr(), buf.len(), &mut n);
        assert_eq!(s, OskStatus::Domain);
    }
}

#[test]
fn generate_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let codec_dir = dir.path().join("codec");
    let mut codec = CausalCodec::new(CodecConfig::default()).unwrap();
    codec.stats = open_sora_kit::codec::ChannelStats::identity(codec.latent_channels());
    codec.save(&codec_dir).unwrap();
    Stdit::new(StditConfig::default()).unwrap().save(dir.path().join("ckpt").join("model")).unwrap();

    let c_codec = CString::new(codec_dir.to_str().unwrap()).unwrap();
    let c_ckpt = CString::new(dir.path().join("ckpt").to_str().unwrap()).unwrap();
    let prompt = CString::new("red square").unwrap();
    let first = CString::new("first:1").unwrap();
    unsafe {
        let (mut c, mut m) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(osk_codec_load(c_codec.as_ptr(), &mut c), OskStatus::Ok, "{}", last_error());
        assert_eq!(osk_model_load(c_ckpt.as_ptr(), &mut m), OskStatus::Ok, "{}", last_error());
        let mut params = OskGenerateParams {
            prompt: prompt.as_ptr(),
            frames: 5,
            resolution: 16,
            fps: 4.0,
            steps: 3,
            seed: 1,
            text_max_len: 16,
            condition: ptr::null(),
        };
        let mut out = ptr::null_mut();
        assert_eq!(osk_generate(m, c, &params, ptr::null(), &mut out), OskStatus::Ok, "{}", last_error());
        let mut shape = [0usize; 4];
        osk_video_shape(out, shape.as_mut_ptr());
        assert_eq!(shape, [5, 16, 16, 3]);
        osk_video_free(out);

        let input = video(5, 16);
        params.condition = first.as_ptr();
        assert_eq!(osk_generate(m, c, &params, ptr::null(), &mut out), OskStatus::InvalidArgument);
        assert_eq!(osk_generate(m, c, &params, input, &mut out), OskStatus::Ok, "{}", last_error());
        let mut rec = ptr::null_mut();
        assert_eq!(osk_codec_roundtrip(c, input, &mut rec), OskStatus::Ok);
        let (mut a, mut b) = (vec![0f32; 5 * 768], vec![0f32; 5 * 768]);
        osk_video_data(out, a.as_mut_ptr(), a.len());
        osk_video_data(rec, b.as_mut_ptr(), b.len());
        // frame 0 depends on latent 0 only, which is the input's
        assert_eq!(a[..768], b[..768]);
        for h in [input, out, rec] {
            osk_video_free(h);
        }
        params.resolution = 12;
        assert_eq!(osk_generate(m, c, &params, ptr::null(), &mut out), OskStatus::InvalidArgument);
        osk_model_free(m);
        osk_codec_free(c);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(osk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles a small C program against the generated header and the static
/// library. Skipped when no C compiler or static archive is available.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("open_sora_kit.h").exists());
    let target = std::env::var_os("CARGO_TARGET_DIR").map(PathBuf::from).unwrap_or_else(|| manifest.join("../../target"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).map(PathBuf::from).unwrap_or(target.join("debug"));
    let lib = profile_dir.join("libopen_sora_kit_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no cc or {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "open_sora_kit.h"
int main(void) {
    char buf[128];
    size_t n = 0;
    OskStatus s = osk_format_caption("x", 5.5, 10.0, OSK_CAMERA_PAN_LEFT, buf, sizeof buf, &n);
    if (s != OSK_STATUS_OK || strcmp(buf, "x aesthetic score: 5.5, motion score: 10, camera motion: pan left") != 0) return 1;
    OskVideo *v = NULL;
    if (osk_video_read("/nonexistent.vten", &v) != OSK_STATUS_IO || v != NULL) return 2;
    if (osk_last_error(NULL, 0) == 0) return 3;
    float px[12] = {0};
    if (osk_video_new(1, 2, 2, 3, px, &v) != OSK_STATUS_OK) return 4;
    size_t shape[4];
    osk_video_shape(v, shape);
    osk_video_free(v);
    printf("%s\n", osk_version());
    return shape[3] == 3 ? 0 : 5;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
}

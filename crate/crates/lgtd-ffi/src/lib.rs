//! C ABI over the video super-resolution library.
//!
//! Conventions:
//! - Every fallible call returns an [`LgtdStatus`]; `LGTD_STATUS_OK` is 0.
//! - On failure, [`lgtd_last_error`] returns a thread-local, NUL-terminated
//!   message describing what went wrong (valid until the next failing call
//!   on the same thread).
//! - Models are opaque handles created by [`lgtd_model_load`] and released
//!   by [`lgtd_model_free`]. Handles are immutable after load, so one handle
//!   may be shared across threads for concurrent inference.
//! - Pixel buffers are dense row-major `f64` arrays in channel-major order
//!   (`channel, row, column`), values in [0, 1]; out-of-range values are
//!   clamped on entry. A clip buffer prepends a frame axis.
//! - All entry points catch panics; a panic reports `LGTD_STATUS_INTERNAL`
//!   rather than unwinding across the boundary.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lgtd::data::Frame;
use lgtd::metrics::{psnr, ssim, Channel, EvalProtocol};
use lgtd::model::{clip_to_tensor, Lgtd};
use lgtd::nn::ParamStore;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgtdStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// Argument values were rejected (dimensions, counts, file contents).
    InvalidArgument = 2,
    /// The file could not be read or parsed.
    Io = 3,
    /// Unexpected internal failure (a bug; see lgtd_last_error).
    Internal = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: LgtdStatus, msg: &str) -> LgtdStatus {
    set_error(msg);
    status
}

/// Message for the most recent failure on this thread (empty string if no
/// call has failed). The pointer stays valid until the next failing call on
/// the same thread.
#[no_mangle]
pub extern "C" fn lgtd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lgtd_version() -> *const c_char {
    static VERSION: &CStr = {
        const BYTES: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();
        match CStr::from_bytes_with_nul(BYTES) {
            Ok(c) => c,
            Err(_) => panic!("version string contains NUL"),
        }
    };
    VERSION.as_ptr()
}

/// An opaque loaded model: architecture plus trained parameters.
pub struct LgtdModel {
    model: Lgtd,
    ps: ParamStore,
}

fn guard<F: FnOnce() -> LgtdStatus>(f: F) -> LgtdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(LgtdStatus::Internal, &format!("internal panic: {msg}"))
        }
    }
}

/// Loads a model checkpoint from `path` into a new handle at `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
/// On success the caller owns the handle and must release it with
/// [`lgtd_model_free`].
#[no_mangle]
pub unsafe extern "C" fn lgtd_model_load(
    path: *const c_char,
    out: *mut *mut LgtdModel,
) -> LgtdStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(LgtdStatus::NullArgument, "path and out must be non-NULL");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(LgtdStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        match lgtd::checkpoint::load(Path::new(path)) {
            Ok(loaded) => {
                let handle = Box::new(LgtdModel {
                    model: loaded.model,
                    ps: loaded.ps,
                });
                unsafe { *out = Box::into_raw(handle) };
                LgtdStatus::Ok
            }
            Err(e) => fail(LgtdStatus::Io, &format!("loading {path}: {e}")),
        }
    })
}

/// Releases a handle returned by [`lgtd_model_load`]. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer returned by [`lgtd_model_load`] that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn lgtd_model_free(model: *mut LgtdModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of input frames the model consumes per output frame.
///
/// # Safety
/// `model` must be a live handle from [`lgtd_model_load`].
#[no_mangle]
pub unsafe extern "C" fn lgtd_model_frames(model: *const LgtdModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.model.cfg.t()
}

/// Upsampling factor of the model (output edge length / input edge length).
///
/// # Safety
/// `model` must be a live handle from [`lgtd_model_load`].
#[no_mangle]
pub unsafe extern "C" fn lgtd_model_scale(model: *const LgtdModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.model.cfg.r
}

fn frame_from_slice(buf: &[f64], h: usize, w: usize) -> Frame {
    let mut px = ndarray::Array3::zeros((3, h, w));
    let mut it = buf.iter();
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                px[[c, i, j]] = it.next().copied().unwrap_or(0.0).clamp(0.0, 1.0);
            }
        }
    }
    Frame::from_clamped(px)
}

/// Super-resolves the centre frame of a clip.
///
/// `frames` holds `t` RGB frames of `h`x`w` pixels (layout
/// `frame, channel, row, column`, so `t*3*h*w` doubles). `t` must equal
/// [`lgtd_model_frames`]. The result — one RGB frame of `(h*scale)` by
/// `(w*scale)` pixels, `3*h*scale*w*scale` doubles — is written to `out`.
///
/// # Safety
/// `model` must be a live handle; `frames` must hold `t*3*h*w` readable
/// doubles; `out` must hold `3*(h*scale)*(w*scale)` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lgtd_super_resolve(
    model: *const LgtdModel,
    frames: *const f64,
    t: usize,
    h: usize,
    w: usize,
    out: *mut f64,
) -> LgtdStatus {
    guard(|| {
        if model.is_null() || frames.is_null() || out.is_null() {
            return fail(LgtdStatus::NullArgument, "model, frames, and out must be non-NULL");
        }
        let handle = unsafe { &*model };
        let want_t = handle.model.cfg.t();
        if t != want_t {
            return fail(
                LgtdStatus::InvalidArgument,
                &format!("model consumes {want_t} frames, got {t}"),
            );
        }
        if h == 0 || w == 0 {
            return fail(LgtdStatus::InvalidArgument, "frame dimensions must be positive");
        }
        let n = t * 3 * h * w;
        let buf = unsafe { std::slice::from_raw_parts(frames, n) };
        let frame_len = 3 * h * w;
        let clip_frames: Vec<Frame> = (0..t)
            .map(|k| frame_from_slice(&buf[k * frame_len..(k + 1) * frame_len], h, w))
            .collect();
        let clip = match lgtd::data::Clip::new(clip_frames, "ffi", 0) {
            Ok(c) => c,
            Err(e) => return fail(LgtdStatus::InvalidArgument, &e.to_string()),
        };
        let y = match handle.model.infer(&handle.ps, &clip_to_tensor(&clip)) {
            Ok(y) => y,
            Err(e) => return fail(LgtdStatus::InvalidArgument, &e.to_string()),
        };
        let r = handle.model.cfg.r;
        let (oh, ow) = (h * r, w * r);
        let dst = unsafe { std::slice::from_raw_parts_mut(out, 3 * oh * ow) };
        let mut idx = 0;
        for c in 0..3 {
            for i in 0..oh {
                for j in 0..ow {
                    dst[idx] = y[[0, c, i, j]];
                    idx += 1;
                }
            }
        }
        LgtdStatus::Ok
    })
}

fn metric_args(
    a: *const f64,
    b: *const f64,
    h: usize,
    w: usize,
    out: *mut f64,
) -> Result<(Frame, Frame), LgtdStatus> {
    if a.is_null() || b.is_null() || out.is_null() {
        return Err(fail(LgtdStatus::NullArgument, "a, b, and out must be non-NULL"));
    }
    if h == 0 || w == 0 {
        return Err(fail(LgtdStatus::InvalidArgument, "dimensions must be positive"));
    }
    let n = 3 * h * w;
    let fa = frame_from_slice(unsafe { std::slice::from_raw_parts(a, n) }, h, w);
    let fb = frame_from_slice(unsafe { std::slice::from_raw_parts(b, n) }, h, w);
    Ok((fa, fb))
}

/// Luma PSNR in dB between two RGB frames (`3*h*w` doubles each, [0, 1]),
/// after cropping `border` pixels from every side. Identical frames give
/// +infinity.
///
/// # Safety
/// `a` and `b` must hold `3*h*w` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lgtd_psnr(
    a: *const f64,
    b: *const f64,
    h: usize,
    w: usize,
    border: usize,
    out: *mut f64,
) -> LgtdStatus {
    guard(|| {
        let (fa, fb) = match metric_args(a, b, h, w, out) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let proto = EvalProtocol {
            channel: Channel::Y,
            border_crop: border,
        };
        match psnr(&fa, &fb, &proto) {
            Ok(v) => {
                unsafe { *out = v };
                LgtdStatus::Ok
            }
            Err(e) => fail(LgtdStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Luma structural similarity between two RGB frames (`3*h*w` doubles
/// each, [0, 1]), after cropping `border` pixels from every side.
///
/// # Safety
/// `a` and `b` must hold `3*h*w` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lgtd_ssim(
    a: *const f64,
    b: *const f64,
    h: usize,
    w: usize,
    border: usize,
    out: *mut f64,
) -> LgtdStatus {
    guard(|| {
        let (fa, fb) = match metric_args(a, b, h, w, out) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let proto = EvalProtocol {
            channel: Channel::Y,
            border_crop: border,
        };
        match ssim(&fa, &fb, &proto) {
            Ok(v) => {
                unsafe { *out = v };
                LgtdStatus::Ok
            }
            Err(e) => fail(LgtdStatus::InvalidArgument, &e.to_string()),
        }
    })
}

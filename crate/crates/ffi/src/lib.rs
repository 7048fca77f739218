//! C interface to the stabweave online stitcher.
//!
//! Every function returns an [`SwStatus`]; on failure the message is
//! available from [`sw_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::Matrix3;
use stabweave::config::PipelineConfig;
use stabweave::geometry::{decompose_bidirectional, Homography, ImageSize, PlaneFraction};
use stabweave::image::Image;
use stabweave::pipeline::{OnlineStitcher, StitchedFrame};
use stabweave::smoothing::Mode;
use stabweave::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InputError = 3,
    EstimationFailed = 4,
    NoOutput = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Opaque online stitcher.
pub struct SwStitcher {
    inner: OnlineStitcher,
    last: Option<StitchedFrame>,
}

/// Description of the most recent output frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SwFrameInfo {
    /// 1-based frame index.
    pub t: u64,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// 0 for pass-through startup frames.
    pub smoothed: u8,
    /// Overlap PSNR in dB, NaN without overlap.
    pub psnr: f64,
    pub distortion: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SwStatus {
    if e.is_estimation_failure() {
        SwStatus::EstimationFailed
    } else {
        match e {
            Error::InvalidConfig(_) | Error::Json(_) => SwStatus::InvalidArgument,
            _ => SwStatus::InputError,
        }
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SwStatus, String)>) -> SwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SwStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SwStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (SwStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SwStatus, String) {
    (SwStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an online stitcher. `config_json` may be null for defaults;
/// otherwise it is a JSON pipeline configuration. Offline mode is rejected.
///
/// # Safety
/// `config_json` must be null or a valid NUL-terminated string, and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sw_stitcher_new(config_json: *const c_char, out: *mut *mut SwStitcher) -> SwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let cfg = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| (SwStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
            serde_json::from_str(text).map_err(|e| (SwStatus::InvalidArgument, format!("config: {e}")))?
        };
        if cfg.mode != Mode::Online {
            return Err((SwStatus::InvalidArgument, "only online mode is available".into()));
        }
        let inner = OnlineStitcher::new(cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SwStitcher { inner, last: None }));
        Ok(())
    })
}

/// Releases a stitcher. Null is ignored.
///
/// # Safety
/// `handle` must be null or come from [`sw_stitcher_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sw_stitcher_free(handle: *mut SwStitcher) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn image_arg(pixels: *const u8, width: u32, height: u32, channels: u32) -> Result<Image, (SwStatus, String)> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let n = width as usize * height as usize * channels as usize;
    let bytes = std::slice::from_raw_parts(pixels, n);
    Image::from_u8(width as usize, height as usize, channels as usize, bytes)
        .map_err(|e| (SwStatus::InvalidArgument, e.to_string()))
}

/// Feeds one synchronized pair of interleaved 8-bit frames (1 or 3
/// channels, row-major, no padding) and produces one output frame.
///
/// # Safety
/// `handle` must be a live stitcher; each pixel pointer must address
/// `width * height * channels` bytes.
#[no_mangle]
pub unsafe extern "C" fn sw_stitcher_push(
    handle: *mut SwStitcher,
    reference: *const u8,
    target: *const u8,
    width: u32,
    height: u32,
    channels: u32,
) -> SwStatus {
    guard(|| {
        let s = handle.as_mut().ok_or_else(|| null("handle"))?;
        let r = image_arg(reference, width, height, channels)?;
        let g = image_arg(target, width, height, channels)?;
        s.last = None;
        s.last = Some(s.inner.push(&r, &g).map_err(lib_err)?);
        Ok(())
    })
}

/// Describes the frame produced by the last successful push.
///
/// # Safety
/// `handle` must be a live stitcher and `info` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sw_stitcher_output_info(handle: *const SwStitcher, info: *mut SwFrameInfo) -> SwStatus {
    guard(|| {
        let s = handle.as_ref().ok_or_else(|| null("handle"))?;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        let f = s.last.as_ref().ok_or((SwStatus::NoOutput, "no output frame".to_string()))?;
        *info = SwFrameInfo {
            t: f.t as u64,
            width: f.image.width() as u32,
            height: f.image.height() as u32,
            channels: f.image.channels() as u32,
            smoothed: f.smoothed as u8,
            psnr: f.report.psnr.unwrap_or(f64::NAN),
            distortion: f.report.distortion,
        };
        Ok(())
    })
}

/// Copies the last output frame as interleaved 8-bit pixels into `buffer`
/// of `len` bytes, which must hold `width * height * channels` bytes.
///
/// # Safety
/// `handle` must be a live stitcher and `buffer` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sw_stitcher_copy_output(handle: *const SwStitcher, buffer: *mut u8, len: usize) -> SwStatus {
    guard(|| {
        let s = handle.as_ref().ok_or_else(|| null("handle"))?;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let f = s.last.as_ref().ok_or((SwStatus::NoOutput, "no output frame".to_string()))?;
        let bytes = f.image.to_u8();
        if len < bytes.len() {
            return Err((SwStatus::BufferTooSmall, format!("need {} bytes, have {len}", bytes.len())));
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buffer, bytes.len());
        Ok(())
    })
}

/// Splits the row-major homography `h` (reference to target, for frames of
/// `width` x `height`) into the homographies that take each view to the
/// shared plane at fraction `beta`. Outputs are row-major and normalized.
///
/// # Safety
/// `h`, `out_ref` and `out_tgt` must each address nine doubles.
#[no_mangle]
pub unsafe extern "C" fn sw_decompose(
    h: *const f64,
    width: u32,
    height: u32,
    beta: f64,
    out_ref: *mut f64,
    out_tgt: *mut f64,
) -> SwStatus {
    guard(|| {
        if h.is_null() || out_ref.is_null() || out_tgt.is_null() {
            return Err(null("matrix pointer"));
        }
        let m = Matrix3::from_row_slice(std::slice::from_raw_parts(h, 9));
        let size = ImageSize::new(width, height);
        let frac = PlaneFraction::new(beta).map_err(|e| (SwStatus::InvalidArgument, e.to_string()))?;
        let h = Homography::from_matrix(m, size).map_err(|e| (SwStatus::InvalidArgument, e.to_string()))?;
        let (hr, ht) = decompose_bidirectional(&h, frac).map_err(lib_err)?;
        for (dst, src) in [(out_ref, hr), (out_tgt, ht)] {
            let out = std::slice::from_raw_parts_mut(dst, 9);
            for r in 0..3 {
                for c in 0..3 {
                    out[r * 3 + c] = src.matrix()[(r, c)];
                }
            }
        }
        Ok(())
    })
}

//! C ABI for embedding the detection engine in non-Rust hosts.
//!
//! Conventions:
//! - Every fallible call returns a [`PwStatus`]; `0` (`OK`) is success.
//! - Results come back through out-pointers. Returned strings are UTF-8,
//!   NUL-terminated, and owned by the caller; release them with
//!   [`pw_string_free`].
//! - On failure the call stores a message retrievable with
//!   [`pw_last_error`]; the pointer stays valid until the next failing
//!   call on the same thread.
//! - Handles are not thread-safe: one engine must not be used from two
//!   threads concurrently. Distinct engines are independent.
//!
//! The generated header lives at `include/pyrowatch.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pyrowatch::alert::payload_json;
use pyrowatch::config::parse_engine_config;
use pyrowatch::imaging::Frame;
use pyrowatch::pipeline::{Engine, EngineConfig, FrameResult};

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration text was rejected; see `pw_last_error`.
    InvalidConfig = 3,
    /// Width or height is zero, or the buffer size overflows.
    BadDimensions = 4,
    /// Frame analysis failed (e.g. dimensions changed mid-stream).
    DetectFailed = 5,
    /// An unexpected internal failure was caught at the boundary.
    Internal = 6,
}

/// Opaque detection engine. Create with [`pw_engine_new`], feed frames in
/// order with [`pw_engine_process_frame`], destroy with [`pw_engine_free`].
pub struct PwEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: PwStatus, message: impl AsRef<str>) -> PwStatus {
    let clean: String = message
        .as_ref()
        .chars()
        .map(|c| if c == '\0' { ' ' } else { c })
        .collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).expect("NULs stripped above");
    });
    status
}

/// Message for the most recent failing call on this thread. Never null;
/// empty before any failure. Valid until the next failing call here.
#[no_mangle]
pub extern "C" fn pw_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pw_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Create an engine. `config` is either null (defaults) or NUL-terminated
/// `key = value` lines using the detection keys of the pipeline config
/// format (`diff_threshold`, `erode_w`, `hue_lo`, `connectivity`,
/// `hough_theta_bins`, `severity_watch_pct`, ...). Unknown keys are
/// rejected. On success `*out` owns the engine.
///
/// # Safety
/// `config` must be null or point to a NUL-terminated string; `out` must
/// be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn pw_engine_new(config: *const c_char, out: *mut *mut PwEngine) -> PwStatus {
    if out.is_null() {
        return fail(PwStatus::NullArgument, "out engine pointer is null");
    }
    *out = ptr::null_mut();
    let cfg = if config.is_null() {
        EngineConfig::default()
    } else {
        let text = match CStr::from_ptr(config).to_str() {
            Ok(t) => t,
            Err(_) => return fail(PwStatus::InvalidUtf8, "config is not valid UTF-8"),
        };
        match parse_engine_config(text) {
            Ok(c) => c,
            Err(e) => return fail(PwStatus::InvalidConfig, e.to_string()),
        }
    };
    match catch_unwind(|| Box::new(PwEngine { inner: Engine::new(cfg) })) {
        Ok(engine) => {
            *out = Box::into_raw(engine);
            PwStatus::Ok
        }
        Err(_) => fail(PwStatus::Internal, "internal panic while building engine"),
    }
}

fn result_json(r: &FrameResult) -> String {
    let flows: Vec<serde_json::Value> = r
        .flows
        .iter()
        .map(|(blob, traj)| {
            serde_json::json!({
                "label": blob.label,
                "area": blob.area,
                "centroid": [blob.centroid.0, blob.centroid.1],
                "grados": traj.grados,
                "direction": traj.direction,
                "deviation": traj.displayed_deviation,
                "source": traj.source,
            })
        })
        .collect();
    let event = r.event.as_ref().map(|e| {
        serde_json::from_str::<serde_json::Value>(&payload_json(e)).expect("event payload is JSON")
    });
    serde_json::json!({
        "frame_id": r.frame_id,
        "first_frame": r.first_frame,
        "flows": flows,
        "event": event,
    })
    .to_string()
}

/// Analyze the next frame. `rgb` points to `width * height * 3` bytes of
/// row-major 8-bit RGB. The first frame primes the detector and reports no
/// flows. If `out_json` is non-null it receives a JSON report (flows,
/// trajectories, and the alert event if one fired) to release with
/// [`pw_string_free`].
///
/// Returns `DETECT_FAILED` when the frame is incompatible with the previous
/// one; the engine keeps its prior state and stays usable.
///
/// # Safety
/// `engine` must come from [`pw_engine_new`] and not be used concurrently;
/// `rgb` must point to at least `width * height * 3` readable bytes;
/// `out_json` must be null or valid writable storage.
#[no_mangle]
pub unsafe extern "C" fn pw_engine_process_frame(
    engine: *mut PwEngine,
    rgb: *const u8,
    width: u32,
    height: u32,
    frame_id: u64,
    timestamp_ms: u64,
    out_json: *mut *mut c_char,
) -> PwStatus {
    if engine.is_null() {
        return fail(PwStatus::NullArgument, "engine handle is null");
    }
    if rgb.is_null() {
        return fail(PwStatus::NullArgument, "rgb pointer is null");
    }
    if !out_json.is_null() {
        *out_json = ptr::null_mut();
    }
    if width == 0 || height == 0 {
        return fail(PwStatus::BadDimensions, "width and height must be positive");
    }
    let Some(len) = (width as usize)
        .checked_mul(height as usize)
        .and_then(|p| p.checked_mul(3))
    else {
        return fail(PwStatus::BadDimensions, "frame size overflows");
    };
    let data = std::slice::from_raw_parts(rgb, len).to_vec();
    let inner = &mut (*engine).inner;

    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<String, (PwStatus, String)> {
        let mut frame = Frame::new(width, height, data)
            .map_err(|e| (PwStatus::BadDimensions, e.to_string()))?;
        frame.frame_id = frame_id;
        frame.timestamp_ms = timestamp_ms;
        let result = inner
            .process(frame)
            .map_err(|e| (PwStatus::DetectFailed, e.to_string()))?;
        Ok(result_json(&result))
    }));
    match outcome {
        Ok(Ok(json)) => {
            if !out_json.is_null() {
                *out_json = CString::new(json)
                    .expect("JSON contains no NUL")
                    .into_raw();
            }
            PwStatus::Ok
        }
        Ok(Err((status, message))) => fail(status, message),
        Err(_) => fail(PwStatus::Internal, "internal panic while processing frame"),
    }
}

/// One-shot analysis of a frame pair with default parameters: primes on
/// `prev_rgb`, analyzes `curr_rgb`, and returns the second frame's JSON
/// report through `out_json` (mandatory here). Both buffers are
/// `width * height * 3` bytes of row-major RGB.
///
/// # Safety
/// Both buffers must be readable for their full size; `out_json` must be
/// valid writable storage.
#[no_mangle]
pub unsafe extern "C" fn pw_detect_once(
    prev_rgb: *const u8,
    curr_rgb: *const u8,
    width: u32,
    height: u32,
    out_json: *mut *mut c_char,
) -> PwStatus {
    if out_json.is_null() {
        return fail(PwStatus::NullArgument, "out_json pointer is null");
    }
    let mut engine: *mut PwEngine = ptr::null_mut();
    let status = pw_engine_new(ptr::null(), &mut engine);
    if status != PwStatus::Ok {
        return status;
    }
    let status = pw_engine_process_frame(engine, prev_rgb, width, height, 0, 0, ptr::null_mut());
    if status != PwStatus::Ok {
        pw_engine_free(engine);
        return status;
    }
    let status = pw_engine_process_frame(engine, curr_rgb, width, height, 1, 100, out_json);
    pw_engine_free(engine);
    status
}

/// Destroy an engine. Null is a no-op. The handle must not be used again.
///
/// # Safety
/// `engine` must be null or a pointer obtained from [`pw_engine_new`] that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn pw_engine_free(engine: *mut PwEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer returned through an `out_json` argument
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn pw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

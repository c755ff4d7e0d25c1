//! C ABI for the nonstationary component analysis pipeline.
//!
//! All entry points are panic-safe, return an `NscaStatus` code, and record a
//! human-readable message retrievable via `nsca_last_error_message`. Results
//! are returned through an opaque handle that must be released with
//! `nsca_result_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use ndarray::Array2;

use nsca_core::error::NscaError;
use nsca_core::io::RunConfigFile;
use nsca_core::pipeline::{run_nsca, SeparationOutput};
use nsca_core::signal::MultichannelSignal;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NscaStatus {
    /// Success.
    NscaOk = 0,
    /// A required pointer argument was null.
    NscaNullPointer = 1,
    /// Malformed input: bad dimensions, non-finite samples, or an invalid
    /// configuration document.
    NscaInvalidInput = 2,
    /// The pipeline ran but could not produce a result (e.g. no
    /// nonstationary epochs were found).
    NscaPipelineError = 3,
    /// An output buffer was too small.
    NscaBufferTooSmall = 4,
    /// An internal panic was caught; the library state is still valid.
    NscaInternalError = 5,
}

/// Opaque separation result handle.
pub struct NscaResult {
    out: SeparationOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_for(err: &NscaError) -> NscaStatus {
    match err {
        NscaError::Parse(_)
        | NscaError::MissingSamplingRate
        | NscaError::InvalidParameter(_)
        | NscaError::EmptySignal
        | NscaError::NonFinite
        | NscaError::DimensionMismatch(_) => NscaStatus::NscaInvalidInput,
        _ => NscaStatus::NscaPipelineError,
    }
}

fn guard<F: FnOnce() -> NscaStatus>(f: F) -> NscaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            NscaStatus::NscaInternalError
        }
    }
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nsca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the message of the last error raised on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nsca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Runs the extraction pipeline on channel-major samples
/// (`data[ch * n_samples + t]`).
///
/// `config_json` is an optional NUL-terminated run-configuration document
/// (the same strict JSON schema as the CLI); pass null for defaults. On
/// success `*out` owns the result and must be freed with `nsca_result_free`.
///
/// # Safety
/// `data` must point to `n_channels * n_samples` doubles; `config_json`, if
/// non-null, must be a valid NUL-terminated string; `out` must be a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn nsca_extract(
    data: *const f64,
    n_channels: usize,
    n_samples: usize,
    fs: f64,
    config_json: *const c_char,
    out: *mut *mut NscaResult,
) -> NscaStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return NscaStatus::NscaNullPointer;
        }
        if n_channels == 0 || n_samples == 0 {
            set_last_error("n_channels and n_samples must be positive");
            return NscaStatus::NscaInvalidInput;
        }
        let cfg = if config_json.is_null() {
            RunConfigFile::default()
        } else {
            let text = match std::ffi::CStr::from_ptr(config_json).to_str() {
                Ok(t) => t,
                Err(_) => {
                    set_last_error("config_json is not valid UTF-8");
                    return NscaStatus::NscaInvalidInput;
                }
            };
            match RunConfigFile::parse(text) {
                Ok(c) => c,
                Err(e) => {
                    set_last_error(&e.to_string());
                    return status_for(&e);
                }
            }
        };
        let pipeline_cfg = match cfg.pipeline.to_config() {
            Ok(c) => c,
            Err(e) => {
                set_last_error(&e.to_string());
                return status_for(&e);
            }
        };
        let raw = slice::from_raw_parts(data, n_channels * n_samples);
        let arr = match Array2::from_shape_vec((n_channels, n_samples), raw.to_vec()) {
            Ok(a) => a,
            Err(e) => {
                set_last_error(&e.to_string());
                return NscaStatus::NscaInvalidInput;
            }
        };
        let signal = match MultichannelSignal::new(arr, fs) {
            Ok(s) => s,
            Err(e) => {
                set_last_error(&e.to_string());
                return status_for(&e);
            }
        };
        match run_nsca(&signal, &pipeline_cfg) {
            Ok(result) => {
                *out = Box::into_raw(Box::new(NscaResult { out: result }));
                NscaStatus::NscaOk
            }
            Err(e) => {
                set_last_error(&e.to_string());
                status_for(&e)
            }
        }
    })
}

/// Number of extracted components (equals the channel count).
///
/// # Safety
/// `result` must be a live handle from `nsca_extract`.
#[no_mangle]
pub unsafe extern "C" fn nsca_result_n_components(result: *const NscaResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).out.components.n_channels()
}

/// Number of samples per component.
///
/// # Safety
/// `result` must be a live handle from `nsca_extract`.
#[no_mangle]
pub unsafe extern "C" fn nsca_result_n_samples(result: *const NscaResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).out.components.n_samples()
}

/// Copies the components into `buf` channel-major
/// (`buf[comp * n_samples + t]`); `len` is the buffer capacity in doubles.
///
/// # Safety
/// `result` must be a live handle; `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nsca_result_components(
    result: *const NscaResult,
    buf: *mut f64,
    len: usize,
) -> NscaStatus {
    guard(|| {
        if result.is_null() || buf.is_null() {
            set_last_error("null pointer argument");
            return NscaStatus::NscaNullPointer;
        }
        let comps = &(*result).out.components;
        let needed = comps.n_channels() * comps.n_samples();
        if len < needed {
            set_last_error("components buffer too small");
            return NscaStatus::NscaBufferTooSmall;
        }
        let dst = slice::from_raw_parts_mut(buf, needed);
        let data = comps.data();
        for c in 0..comps.n_channels() {
            for t in 0..comps.n_samples() {
                dst[c * comps.n_samples() + t] = data[[c, t]];
            }
        }
        NscaStatus::NscaOk
    })
}

/// Copies the n x n demixing matrix into `buf` row-major.
///
/// # Safety
/// `result` must be a live handle; `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nsca_result_demixing(
    result: *const NscaResult,
    buf: *mut f64,
    len: usize,
) -> NscaStatus {
    guard(|| {
        if result.is_null() || buf.is_null() {
            set_last_error("null pointer argument");
            return NscaStatus::NscaNullPointer;
        }
        let w = &(*result).out.demixing;
        let needed = w.nrows() * w.ncols();
        if len < needed {
            set_last_error("demixing buffer too small");
            return NscaStatus::NscaBufferTooSmall;
        }
        let dst = slice::from_raw_parts_mut(buf, needed);
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                dst[r * w.ncols() + c] = w[[r, c]];
            }
        }
        NscaStatus::NscaOk
    })
}

/// Copies the component ranking: `indices[i]` is the component index ranked
/// `i`-th (most target-like first) and `scores[i]` its energy-ratio score.
/// `len` is the capacity of both arrays.
///
/// # Safety
/// `result` must be a live handle; `indices` and `scores` must each point to
/// `len` elements.
#[no_mangle]
pub unsafe extern "C" fn nsca_result_ranking(
    result: *const NscaResult,
    indices: *mut usize,
    scores: *mut f64,
    len: usize,
) -> NscaStatus {
    guard(|| {
        if result.is_null() || indices.is_null() || scores.is_null() {
            set_last_error("null pointer argument");
            return NscaStatus::NscaNullPointer;
        }
        let ranking = &(*result).out.ranking;
        if len < ranking.len() {
            set_last_error("ranking buffer too small");
            return NscaStatus::NscaBufferTooSmall;
        }
        let idx = slice::from_raw_parts_mut(indices, ranking.len());
        let sc = slice::from_raw_parts_mut(scores, ranking.len());
        for (i, entry) in ranking.iter().enumerate() {
            idx[i] = entry.component;
            sc[i] = entry.score;
        }
        NscaStatus::NscaOk
    })
}

/// Releases a result handle. Null is ignored; a handle must not be used
/// after being freed.
///
/// # Safety
/// `result` must be null or a live handle from `nsca_extract`.
#[no_mangle]
pub unsafe extern "C" fn nsca_result_free(result: *mut NscaResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

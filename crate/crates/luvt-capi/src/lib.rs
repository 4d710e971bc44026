//! C ABI for the luvt pipeline: opaque config handles, integer status codes,
//! and a thread-local last-error message. The installed header lives at
//! `include/luvt.h` and is kept in sync by the `header_matches_exports` test.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use luvt::error::Error;
use luvt::harness::{self, ExperimentConfig};
use luvt::metrics::{roc_auc, ScoredSample};
use luvt::raster::Label;

pub const LUVT_OK: i32 = 0;
pub const LUVT_ERR_USAGE: i32 = 1;
pub const LUVT_ERR_RUNTIME: i32 = 2;
pub const LUVT_ERR_NULL_ARGUMENT: i32 = 3;
pub const LUVT_ERR_UTF8: i32 = 4;
pub const LUVT_ERR_PANIC: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status(err: Error) -> i32 {
    let code = match err {
        Error::Usage(_) => LUVT_ERR_USAGE,
        _ => LUVT_ERR_RUNTIME,
    };
    set_error(err.to_string());
    code
}

fn guarded(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            LUVT_ERR_PANIC
        }
    }
}

/// Opaque experiment configuration handle.
pub struct LuvtConfig(ExperimentConfig);

/// Headline evaluation metrics returned by `luvt_evaluate`.
#[repr(C)]
pub struct LuvtEvalSummary {
    pub auroc: f64,
    pub precision_at_r: f64,
    pub recall_at_r: f64,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, i32> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(LUVT_ERR_NULL_ARGUMENT);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        LUVT_ERR_UTF8
    })
}

/// Allocates a configuration with all defaults filled in.
#[no_mangle]
pub extern "C" fn luvt_config_new() -> *mut LuvtConfig {
    Box::into_raw(Box::new(LuvtConfig(ExperimentConfig::default())))
}

/// Frees a configuration. Null is a no-op.
///
/// # Safety
/// `cfg` must come from `luvt_config_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn luvt_config_free(cfg: *mut LuvtConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Applies one dotted `key = value` assignment (same keys as config files).
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn luvt_config_set(
    cfg: *mut LuvtConfig,
    key: *const c_char,
    value: *const c_char,
) -> i32 {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config handle");
        return LUVT_ERR_NULL_ARGUMENT;
    };
    let (key, value) = match (cstr(key), cstr(value)) {
        (Ok(k), Ok(v)) => (k, v),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    guarded(|| match cfg.0.set(key, value) {
        Ok(()) => LUVT_OK,
        Err(e) => status(e),
    })
}

/// Loads a line-based `key = value` config file into the handle.
///
/// # Safety
/// `cfg` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn luvt_config_load_file(
    cfg: *mut LuvtConfig,
    path: *const c_char,
) -> i32 {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config handle");
        return LUVT_ERR_NULL_ARGUMENT;
    };
    let path = match cstr(path) {
        Ok(p) => p,
        Err(c) => return c,
    };
    guarded(|| match cfg.0.apply_file(Path::new(path)) {
        Ok(()) => LUVT_OK,
        Err(e) => status(e),
    })
}

/// Synthesizes the configured train and test datasets.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn luvt_synth(cfg: *const LuvtConfig) -> i32 {
    let Some(cfg) = cfg.as_ref() else {
        set_error("null config handle");
        return LUVT_ERR_NULL_ARGUMENT;
    };
    guarded(|| match harness::cmd_synth(&cfg.0) {
        Ok(()) => LUVT_OK,
        Err(e) => status(e),
    })
}

/// Trains the configured model family.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn luvt_train(cfg: *const LuvtConfig) -> i32 {
    let Some(cfg) = cfg.as_ref() else {
        set_error("null config handle");
        return LUVT_ERR_NULL_ARGUMENT;
    };
    guarded(|| match harness::cmd_train(&cfg.0) {
        Ok(_) => LUVT_OK,
        Err(e) => status(e),
    })
}

/// Evaluates the trained model; on success fills `out` with the aggregate
/// metrics.
///
/// # Safety
/// `cfg` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn luvt_evaluate(
    cfg: *const LuvtConfig,
    out: *mut LuvtEvalSummary,
) -> i32 {
    let Some(cfg) = cfg.as_ref() else {
        set_error("null config handle");
        return LUVT_ERR_NULL_ARGUMENT;
    };
    if out.is_null() {
        set_error("null output argument");
        return LUVT_ERR_NULL_ARGUMENT;
    }
    guarded(|| match harness::cmd_evaluate(&cfg.0) {
        Ok(record) => {
            (*out) = LuvtEvalSummary {
                auroc: record.aggregate.auroc,
                precision_at_r: record.aggregate.precision_at_r,
                recall_at_r: record.aggregate.recall_at_r,
            };
            LUVT_OK
        }
        Err(e) => status(e),
    })
}

/// Tie-aware AUROC over `n` samples; labels are 1 = defective, 0 =
/// defect-free.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements; `out_auroc`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn luvt_roc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_auroc: *mut f64,
) -> i32 {
    if scores.is_null() || labels.is_null() || out_auroc.is_null() {
        set_error("null argument");
        return LUVT_ERR_NULL_ARGUMENT;
    }
    let scores = std::slice::from_raw_parts(scores, n);
    let labels = std::slice::from_raw_parts(labels, n);
    guarded(|| {
        let samples: Vec<ScoredSample> = scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| ScoredSample {
                id: String::new(),
                anomaly_score: s,
                label: if l != 0 { Label::Defective } else { Label::DefectFree },
            })
            .collect();
        match roc_auc(&samples) {
            Ok(curve) => {
                *out_auroc = curve.auroc;
                LUVT_OK
            }
            Err(e) => status(e),
        }
    })
}

/// Copies the calling thread's last error message (NUL-terminated, possibly
/// truncated) into `buf` and returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn luvt_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

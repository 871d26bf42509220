//! C ABI over `calf-core`.
//!
//! Configurations and run summaries are opaque handles owned by the caller
//! and released with their `*_free` function. Every fallible call returns a
//! [`CalfStatus`]; on failure [`calf_last_error`] describes what went wrong
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use calf_core::harness::{run_experiment, ExperimentConfig, HarnessError, RunOptions, RunSummary};
use calf_core::lyapunov::{lyapunov_cart, LyapunovSpec, NominalPolicy};
use calf_core::systems::{CartLimits, CartState};

/// Result codes of the C interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    IoError = 4,
    RunError = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Opaque experiment configuration.
pub struct CalfConfig(ExperimentConfig);

/// Opaque result of a batch of runs.
pub struct CalfSummary(RunSummary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: CalfStatus, msg: impl Into<String>) -> CalfStatus {
    set_error(msg);
    status
}

fn harness_status(e: &HarnessError) -> CalfStatus {
    match e {
        HarnessError::Config(_) => CalfStatus::ConfigError,
        HarnessError::Io { .. } | HarnessError::Plot { .. } => CalfStatus::IoError,
        _ => CalfStatus::RunError,
    }
}

/// Runs `f`, turning a panic into [`CalfStatus::Panic`].
fn guarded(f: impl FnOnce() -> CalfStatus) -> CalfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CalfStatus::Panic, msg)
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, CalfStatus> {
    if s.is_null() {
        return Err(fail(CalfStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(CalfStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn calf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn calf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses key = value configuration text into `*out`.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn calf_config_parse(text: *const c_char, out: *mut *mut CalfConfig) -> CalfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CalfStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::parse(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(CalfConfig(cfg)));
                CalfStatus::Ok
            }
            Err(e) => fail(CalfStatus::ConfigError, e.to_string()),
        }
    })
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn calf_config_default() -> *mut CalfConfig {
    Box::into_raw(Box::new(CalfConfig(ExperimentConfig::default())))
}

/// Configuration rendered back to text; free with [`calf_string_free`].
///
/// # Safety
/// `cfg` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn calf_config_to_text(cfg: *const CalfConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => CString::new(c.0.to_text()).map_or(ptr::null_mut(), CString::into_raw),
        None => {
            set_error("null config");
            ptr::null_mut()
        }
    }
}

/// Replaces the seed list with `first .. first + count`.
///
/// # Safety
/// `cfg` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn calf_config_set_seeds(cfg: *mut CalfConfig, first: u64, count: u64) -> CalfStatus {
    guarded(|| {
        let Some(c) = cfg.as_mut() else {
            return fail(CalfStatus::NullPointer, "null config");
        };
        if count == 0 {
            return fail(CalfStatus::InvalidArgument, "at least one seed is required");
        }
        c.0.seeds = (first..first + count).collect();
        CalfStatus::Ok
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn calf_config_free(cfg: *mut CalfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every (target, seed) pair. `out_dir` may be null to skip file
/// output; `threads` of 0 uses all cores.
///
/// # Safety
/// `cfg` must be a handle from this library, `out_dir` null or a valid
/// string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn calf_run(
    cfg: *const CalfConfig,
    out_dir: *const c_char,
    threads: u32,
    seed_base: u64,
    out: *mut *mut CalfSummary,
) -> CalfStatus {
    guarded(|| {
        let (Some(c), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(CalfStatus::NullPointer, "null config or output pointer");
        };
        let dir = if out_dir.is_null() {
            None
        } else {
            match read_str(out_dir) {
                Ok(d) => Some(PathBuf::from(d)),
                Err(s) => return s,
            }
        };
        let opts = RunOptions {
            out_dir: dir,
            parallel: (threads > 0).then_some(threads as usize),
            seed_base,
        };
        match run_experiment(&c.0, &opts) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(CalfSummary(s)));
                CalfStatus::Ok
            }
            Err(e) => fail(harness_status(&e), e.to_string()),
        }
    })
}

/// Cost statistics of a summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CalfCostStats {
    pub runs: u64,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub reach_rate: f64,
    pub mean_fallback_fraction: f64,
}

/// # Safety
/// `summary` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn calf_summary_stats(summary: *const CalfSummary, out: *mut CalfCostStats) -> CalfStatus {
    guarded(|| {
        let (Some(s), false) = (summary.as_ref(), out.is_null()) else {
            return fail(CalfStatus::NullPointer, "null summary or output pointer");
        };
        let st = s.0.stats;
        *out = CalfCostStats {
            runs: st.n as u64,
            mean: st.mean,
            median: st.median,
            q1: st.q1,
            q3: st.q3,
            reach_rate: s.0.reach_rate,
            mean_fallback_fraction: s.0.mean_fallback_fraction,
        };
        CalfStatus::Ok
    })
}

/// Total cost of run `index` in (target, seed) order.
///
/// # Safety
/// `summary` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn calf_summary_run_cost(summary: *const CalfSummary, index: u64, out: *mut f64) -> CalfStatus {
    guarded(|| {
        let (Some(s), false) = (summary.as_ref(), out.is_null()) else {
            return fail(CalfStatus::NullPointer, "null summary or output pointer");
        };
        match s.0.runs.get(index as usize) {
            Some(r) => {
                *out = r.total_cost;
                CalfStatus::Ok
            }
            None => fail(CalfStatus::InvalidArgument, format!("run index {index} out of range")),
        }
    })
}

/// Summary as JSON; free with [`calf_string_free`].
///
/// # Safety
/// `summary` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn calf_summary_to_json(summary: *const CalfSummary) -> *mut c_char {
    let Some(s) = summary.as_ref() else {
        set_error("null summary");
        return ptr::null_mut();
    };
    match s.0.to_json() {
        Ok(j) => CString::new(j).map_or(ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `summary` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn calf_summary_free(summary: *mut CalfSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn calf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Lyapunov function of the parking task at the pose error `(x, y, theta)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn calf_lyapunov(x: f64, y: f64, theta: f64, out: *mut f64) -> CalfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CalfStatus::NullPointer, "null output pointer");
        }
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return fail(CalfStatus::InvalidArgument, "non-finite state");
        }
        *out = lyapunov_cart(&CartState::new(x, y, theta), &LyapunovSpec::default());
        CalfStatus::Ok
    })
}

/// Nominal parking action `(v, omega)` for the pose error `(x, y, theta)`
/// with sampling time `delta`.
///
/// # Safety
/// `v` and `omega` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn calf_nominal_action(
    x: f64,
    y: f64,
    theta: f64,
    delta: f64,
    v: *mut f64,
    omega: *mut f64,
) -> CalfStatus {
    guarded(|| {
        if v.is_null() || omega.is_null() {
            return fail(CalfStatus::NullPointer, "null output pointer");
        }
        if !(delta > 0.0) || !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return fail(CalfStatus::InvalidArgument, "delta must be positive and the state finite");
        }
        let policy = NominalPolicy::new(
            LyapunovSpec::default(),
            CartLimits::default(),
            delta,
            NominalPolicy::DEFAULT_GRID,
        );
        let u = policy.action(&CartState::new(x, y, theta));
        *v = u.u1;
        *omega = u.u2;
        CalfStatus::Ok
    })
}

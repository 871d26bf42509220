use std::ffi::{CStr, CString};
use std::ptr;

use calf_core::lyapunov::{lyapunov_cart, LyapunovSpec};
use calf_core::systems::CartState;
use calf_ffi::*;

const SHORT: &str = "agent.kind = nominal\nnoise.kind = none\nseeds = 0..2\nsampling.horizon = 2\n";

fn last_error() -> String {
    let p = calf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn lyapunov_matches_core() {
    let mut v = f64::NAN;
    assert_eq!(unsafe { calf_lyapunov(0.4, -0.3, 1.1, &mut v) }, CalfStatus::Ok);
    let want = lyapunov_cart(&CartState::new(0.4, -0.3, 1.1), &LyapunovSpec::default());
    assert_eq!(v, want);
    assert!(calf_last_error().is_null());
}

#[test]
fn null_and_bad_arguments_report_status() {
    assert_eq!(unsafe { calf_lyapunov(0.0, 0.0, 0.0, ptr::null_mut()) }, CalfStatus::NullPointer);
    assert!(last_error().contains("null"));
    let mut v = 0.0;
    assert_eq!(unsafe { calf_lyapunov(f64::NAN, 0.0, 0.0, &mut v) }, CalfStatus::InvalidArgument);
    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(
        unsafe { calf_nominal_action(1.0, 0.0, 0.0, 0.0, &mut a, &mut b) },
        CalfStatus::InvalidArgument
    );
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { calf_config_parse(ptr::null(), &mut cfg) }, CalfStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { calf_config_parse(bad.as_ptr().cast(), &mut cfg) },
        CalfStatus::InvalidUtf8
    );
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { calf_run(ptr::null(), ptr::null(), 1, 0, &mut s) }, CalfStatus::NullPointer);
    unsafe {
        calf_config_free(ptr::null_mut());
        calf_summary_free(ptr::null_mut());
        calf_string_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_carry_the_key() {
    let text = CString::new("sampling.delta = -1\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { calf_config_parse(text.as_ptr(), &mut cfg) }, CalfStatus::ConfigError);
    assert!(cfg.is_null());
    assert!(last_error().contains("sampling.delta"));
}

#[test]
fn nominal_action_stays_within_limits() {
    let (mut v, mut w) = (f64::NAN, f64::NAN);
    assert_eq!(unsafe { calf_nominal_action(1.0, 0.5, 0.2, 0.05, &mut v, &mut w) }, CalfStatus::Ok);
    assert!(v.abs() <= 0.22 + 1e-12 && w.abs() <= 2.84 + 1e-12);
    assert!(v != 0.0 || w != 0.0);
}

#[test]
fn config_round_trips_through_text() {
    let cfg = calf_config_default();
    assert_eq!(unsafe { calf_config_set_seeds(cfg, 3, 4) }, CalfStatus::Ok);
    assert_eq!(unsafe { calf_config_set_seeds(cfg, 0, 0) }, CalfStatus::InvalidArgument);
    let text = unsafe { calf_config_to_text(cfg) };
    assert!(!text.is_null());
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { calf_config_parse(text, &mut again) }, CalfStatus::Ok);
    let a = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    let text2 = unsafe { calf_config_to_text(again) };
    assert_eq!(a, unsafe { CStr::from_ptr(text2) }.to_str().unwrap());
    unsafe {
        calf_string_free(text);
        calf_string_free(text2);
        calf_config_free(cfg);
        calf_config_free(again);
    }
}

#[test]
fn short_run_produces_summary() {
    let text = CString::new(SHORT).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { calf_config_parse(text.as_ptr(), &mut cfg) }, CalfStatus::Ok);
    let mut summary = ptr::null_mut();
    assert_eq!(unsafe { calf_run(cfg, ptr::null(), 0, 0, &mut summary) }, CalfStatus::Ok);
    let mut stats = CalfCostStats::default();
    assert_eq!(unsafe { calf_summary_stats(summary, &mut stats) }, CalfStatus::Ok);
    assert_eq!(stats.runs, 16);
    assert!(stats.q1 <= stats.median && stats.median <= stats.q3);
    let mut c0 = 0.0;
    assert_eq!(unsafe { calf_summary_run_cost(summary, 0, &mut c0) }, CalfStatus::Ok);
    assert!(c0 > 0.0);
    assert_eq!(
        unsafe { calf_summary_run_cost(summary, 16, &mut c0) },
        CalfStatus::InvalidArgument
    );
    let json = unsafe { calf_summary_to_json(summary) };
    let parsed: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(parsed["runs"].as_array().unwrap().len(), 16);
    unsafe {
        calf_string_free(json);
        calf_summary_free(summary);
        calf_config_free(cfg);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/calf.h")).unwrap();
    for name in [
        "calf_last_error",
        "calf_config_parse",
        "calf_config_free",
        "calf_run",
        "calf_summary_stats",
        "calf_summary_to_json",
        "calf_lyapunov",
        "calf_nominal_action",
        "typedef struct CalfConfig CalfConfig",
    ] {
        assert!(header.contains(name), "{name} missing from calf.h");
    }
}

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use odos_ffi::*;

const BASE: &str = r#"{"seed": 3, "frame": {"n_units": 6},
    "model": {"normal_mean": {"noise_var": 1.0, "prior_mean": 0.0, "prior_var": 1.0}},
    "mc": {"outer_draws": 20}, "#;

fn four_units(utility: &str) -> String {
    format!(
        r#"{BASE}"utility": {utility}, "cost": {{"per_measurement": {{"cost": 0.1}}}},
        "design": {{"deterministic": {{"plan": [
            {{"unit": 0, "variable": 0, "time_index": 0}}, {{"unit": 1, "variable": 0, "time_index": 0}},
            {{"unit": 2, "variable": 0, "time_index": 0}}, {{"unit": 3, "variable": 0, "time_index": 0}}]}}}}}}"#
    )
}

fn parse(text: &str) -> Result<*mut OdosConfig, (OdosStatus, String)> {
    let json = CString::new(text).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { odos_config_parse(json.as_ptr(), ptr::null(), &mut handle) };
    if status == OdosStatus::Ok {
        Ok(handle)
    } else {
        Err((status, last_error()))
    }
}

fn last_error() -> String {
    let p = odos_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn run(handle: *const OdosConfig, command: &str) -> Result<String, OdosStatus> {
    let cmd = CString::new(command).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { odos_run(handle, cmd.as_ptr(), &mut out) };
    if status != OdosStatus::Ok {
        assert!(out.is_null());
        return Err(status);
    }
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { odos_string_free(out) };
    Ok(text)
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(odos_version()) }.to_str().unwrap();
    assert_eq!(v, odos::cli::VERSION);
}

#[test]
fn evaluate_returns_exact_posterior_variance() {
    let h = parse(&four_units(r#"{"neg_posterior_variance": {"target": {"component": 0}}}"#)).unwrap();
    let mut est = OdosEstimate::default();
    assert_eq!(unsafe { odos_evaluate(h, &mut est) }, OdosStatus::Ok);
    assert!((est.mean + 0.2).abs() < 1e-12);
    assert_eq!(est.std_error, 0.0);
    assert!(odos_last_error_message().is_null());
    unsafe { odos_config_free(h) };
}

#[test]
fn voi_of_four_units_with_quadratic_loss() {
    let h = parse(&four_units(r#"{"decision_quadratic": {"target": {"component": 0}}}"#)).unwrap();
    let mut v = OdosVoi::default();
    assert_eq!(unsafe { odos_voi(h, &mut v) }, OdosStatus::Ok);
    assert!((v.value - 0.8).abs() < 1e-12, "{v:?}");
    assert_eq!(v.eligible, 1);
    assert_eq!(v.clamped, 0);
    unsafe { odos_config_free(h) };
}

#[test]
fn run_is_deterministic_and_seed_settable() {
    let h = parse(&four_units(r#"{"neg_posterior_variance": {"target": {"component": 0}}}"#)).unwrap();
    let a = run(h, "evaluate").unwrap();
    let b = run(h, "evaluate").unwrap();
    assert_eq!(a, b);
    assert!(!a.contains("timestamp"));
    assert_eq!(unsafe { odos_config_set_seed(h, 99) }, OdosStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&run(h, "evaluate").unwrap()).unwrap();
    assert_eq!(report["seed"], 99);
    assert_eq!(report["command"], "evaluate");
    unsafe { odos_config_free(h) };
}

#[test]
fn unreachable_target_maps_to_infeasible() {
    let text = format!(r#"{BASE}"scenario": {{"sample_size": {{"target_variance": 0.01, "n_max": 5}}}}}}"#);
    let h = parse(&text).unwrap();
    assert_eq!(run(h, "scenario sample-size"), Err(OdosStatus::Infeasible));
    assert!(last_error().contains("infeasible"));
    unsafe { odos_config_free(h) };
}

#[test]
fn parse_errors_carry_the_offending_key() {
    let (status, msg) = parse(r#"{"seed": 1, "frame": {"n_units": 2, "bogus": 1}}"#).unwrap_err();
    assert_eq!(status, OdosStatus::Parse);
    assert!(msg.contains("bogus"), "{msg}");
}

#[test]
fn null_and_unknown_arguments_rejected() {
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { odos_config_parse(ptr::null(), ptr::null(), &mut handle) },
        OdosStatus::InvalidArgument
    );
    let mut est = OdosEstimate::default();
    assert_eq!(unsafe { odos_evaluate(ptr::null(), &mut est) }, OdosStatus::InvalidArgument);
    let h = parse(&four_units(r#"{"neg_posterior_variance": {"target": {"component": 0}}}"#)).unwrap();
    assert_eq!(run(h, "simulate"), Err(OdosStatus::InvalidArgument));
    unsafe {
        odos_config_free(h);
        odos_config_free(ptr::null_mut());
        odos_string_free(ptr::null_mut());
    }
}

#[test]
fn transition_rows_sum_to_one() {
    let mut p = [0.0; 4];
    assert_eq!(unsafe { odos_ctmc_transition(0.7, 1.3, 0.5, p.as_mut_ptr()) }, OdosStatus::Ok);
    assert!((p[0] + p[1] - 1.0).abs() < 1e-12 && (p[2] + p[3] - 1.0).abs() < 1e-12);
    let stay = 1.3 / 2.0 + 0.7 / 2.0 * (-2.0f64 * 0.5).exp();
    assert!((p[0] - stay).abs() < 1e-12);
    assert_eq!(
        unsafe { odos_ctmc_transition(-1.0, 1.0, 1.0, p.as_mut_ptr()) },
        OdosStatus::InvalidArgument
    );
}

#[test]
fn header_declares_api_and_compiles() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/odos.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["odos_config_parse", "odos_run", "odos_string_free", "odos_last_error_message", "ODOS_STATUS_INFEASIBLE"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(probe) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(probe.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"odos.h\"\nint main(void) { OdosConfig *c = 0; return (int)odos_config_parse(\"{}\", 0, &c); }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

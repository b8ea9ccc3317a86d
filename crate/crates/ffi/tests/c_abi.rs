use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dolhodge_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = dh_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_family(extra: &str) -> *mut DhFamily {
    let json = cstr(&format!(r#"{{"n_side": 24, "degree": 1 {extra}}}"#));
    let mut family = ptr::null_mut();
    let status = unsafe { dh_family_new(json.as_ptr(), &mut family) };
    assert_eq!(status, DhStatus::Ok);
    assert!(!family.is_null());
    family
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(dh_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn harmonic_dimension_and_wp_metric() {
    let family = small_family("");
    let mut dim = 0usize;
    assert_eq!(unsafe { dh_harmonic_dim(family, 0.0, 0.0, 0, &mut dim) }, DhStatus::Ok);
    assert_eq!(dim, 1);
    assert_eq!(unsafe { dh_harmonic_dim(family, 0.0, 0.0, 1, &mut dim) }, DhStatus::Ok);
    assert_eq!(dim, 0);

    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(unsafe { dh_wp_metric(family, 0, 0, &mut re, &mut im) }, DhStatus::Ok);
    assert!((re - std::f64::consts::PI.powi(2)).abs() < 1e-10);
    assert!(im.abs() < 1e-12);
    unsafe { dh_family_free(family) };
}

#[test]
fn verify_theorem_report_accessors() {
    let family = small_family("");
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { dh_verify_theorem(family, &mut report) }, DhStatus::Ok);

    let mut residual = f64::NAN;
    assert_eq!(unsafe { dh_report_residual_rel(report, &mut residual) }, DhStatus::Ok);
    assert!(residual < 5e-3, "residual {residual}");
    let mut rank = 0usize;
    assert_eq!(unsafe { dh_report_rank(report, &mut rank) }, DhStatus::Ok);
    assert_eq!(rank, 1);

    let (mut re, mut im) = (0.0, 0.0);
    let mut sum = 0.0;
    for which in 1..=4 {
        assert_eq!(unsafe { dh_report_entry(report, which, 0, 0, 0, 0, &mut re, &mut im) }, DhStatus::Ok);
        sum += re;
    }
    assert_eq!(unsafe { dh_report_entry(report, 0, 0, 0, 0, 0, &mut re, &mut im) }, DhStatus::Ok);
    assert!((re - sum).abs() <= 5e-3 * re.abs());
    assert_eq!(unsafe { dh_report_entry(report, 9, 0, 0, 0, 0, &mut re, &mut im) }, DhStatus::InvalidConfig);
    assert_eq!(unsafe { dh_report_entry(report, 0, 1, 0, 0, 0, &mut re, &mut im) }, DhStatus::InvalidConfig);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dh_report_json(report, &mut json) }, DhStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["rank"], 1);
    unsafe {
        dh_string_free(json);
        dh_report_free(report);
        dh_family_free(family);
    }
}

#[test]
fn tolerance_failure_still_returns_a_report() {
    let family = small_family(r#", "tolerances": {"residual_rel": 1e-12}"#);
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { dh_verify_theorem(family, &mut report) }, DhStatus::Tolerance);
    assert!(!report.is_null());
    assert!(last_error().contains("tolerance"));
    unsafe {
        dh_report_free(report);
        dh_family_free(family);
    }
}

#[test]
fn invalid_configuration_is_reported() {
    let json = cstr(r#"{"no_such_key": 1}"#);
    let mut family = ptr::null_mut();
    assert_eq!(unsafe { dh_family_new(json.as_ptr(), &mut family) }, DhStatus::InvalidConfig);
    assert!(family.is_null());
    assert!(last_error().contains("no_such_key"));

    let json = cstr(r#"{"tau": [0.0, -1.0]}"#);
    assert_eq!(unsafe { dh_family_new(json.as_ptr(), &mut family) }, DhStatus::InvalidConfig);
}

#[test]
fn null_pointers_are_rejected() {
    let mut family = ptr::null_mut();
    assert_eq!(unsafe { dh_family_new(ptr::null(), &mut family) }, DhStatus::NullPointer);
    let json = cstr("{}");
    assert_eq!(unsafe { dh_family_new(json.as_ptr(), ptr::null_mut()) }, DhStatus::NullPointer);
    let mut dim = 0usize;
    assert_eq!(unsafe { dh_harmonic_dim(ptr::null(), 0.0, 0.0, 0, &mut dim) }, DhStatus::NullPointer);
    let mut out = 0.0;
    assert_eq!(unsafe { dh_report_residual_rel(ptr::null(), &mut out) }, DhStatus::NullPointer);
    unsafe {
        dh_family_free(ptr::null_mut());
        dh_report_free(ptr::null_mut());
        dh_string_free(ptr::null_mut());
    }
}

#[test]
fn rank_jump_maps_to_not_locally_free() {
    let family = small_family(r#", "degree": 0, "q": 0"#);
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { dh_verify_theorem(family, &mut report) }, DhStatus::NotLocallyFree);
    assert!(report.is_null());
    unsafe { dh_family_free(family) };
}

#[test]
fn run_returns_report_or_error_object() {
    let json = cstr(r#"{"command": "wp-metric", "n_side": 16}"#);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dh_run(json.as_ptr(), &mut out) }, DhStatus::Ok);
    let value: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    assert_eq!(value["pass"], true);
    assert_eq!(value["command"], "wp-metric");
    unsafe { dh_string_free(out) };

    let json = cstr(r#"{"command": "spectrum", "eta": -1}"#);
    assert_eq!(unsafe { dh_run(json.as_ptr(), &mut out) }, DhStatus::InvalidConfig);
    let value: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    assert_eq!(value["error"]["exit_code"], 2);
    unsafe { dh_string_free(out) };
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("dolhodge.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for name in [
        "dh_family_new",
        "dh_family_free",
        "dh_verify_theorem",
        "dh_report_entry",
        "dh_run",
        "dh_last_error",
        "DH_STATUS_PANIC",
        "typedef struct DhFamily DhFamily",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let compiler = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let source = dir.path().join("probe.c");
    std::fs::write(&source, "#include \"dolhodge.h\"\nint main(void) { return dh_version() == 0; }\n").unwrap();
    match Command::new(&compiler)
        .arg("-fsyntax-only")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&source)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler available; skipped the syntax check"),
    }
}

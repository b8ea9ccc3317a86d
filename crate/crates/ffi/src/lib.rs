//! C ABI for the `dolhodge` library.
//!
//! Families and reports are opaque handles created by `dh_*_new`-style
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`DhStatus`]; on failure the message is available from
//! [`dh_last_error`] on the same thread until the next failing call.
//! Strings returned to the caller are released with [`dh_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dolhodge::config::RunConfig;
use dolhodge::{cli, report, CurvatureReport, Error, Fiber, FamilySpec, FormKind, C64};

/// Result of an FFI call. Codes 0 to 4 coincide with the exit codes of the
/// command-line tool.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DhStatus {
    Ok = 0,
    /// The computation finished but an asserted tolerance failed.
    Tolerance = 1,
    InvalidConfig = 2,
    NotLocallyFree = 3,
    Solver = 4,
    NullPointer = 5,
    Panic = 6,
}

/// A family of line bundles together with its run configuration.
pub struct DhFamily {
    config: RunConfig,
    spec: FamilySpec,
}

/// Result of one curvature comparison.
pub struct DhReport {
    inner: CurvatureReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DhStatus {
    match err.exit_code() {
        2 => DhStatus::InvalidConfig,
        3 => DhStatus::NotLocallyFree,
        _ => DhStatus::Solver,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard<F: FnOnce() -> Result<DhStatus, (DhStatus, String)>>(f: F) -> DhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {message}"));
            DhStatus::Panic
        }
    }
}

fn lib_err(err: Error) -> (DhStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (DhStatus, String) {
    (DhStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DhStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (DhStatus::InvalidConfig, format!("{what} is not UTF-8: {e}")))
}

fn into_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failing call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dh_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dh_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Creates a family from a JSON object of configuration keys (`"{}"` for the
/// defaults).
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dh_family_new(config_json: *const c_char, out: *mut *mut DhFamily) -> DhStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(config_json, "config_json")?;
        let config = RunConfig::from_json(text).map_err(lib_err)?;
        let spec = config.family().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DhFamily { config, spec }));
        Ok(DhStatus::Ok)
    })
}

/// Releases a family; null is ignored.
///
/// # Safety
/// `family` must be null or a handle from [`dh_family_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dh_family_free(family: *mut DhFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Dimension of the harmonic space of degree `q` at the base point `s_re + i s_im`
/// (first base coordinate; the others are zero).
///
/// # Safety
/// `family` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dh_harmonic_dim(
    family: *const DhFamily,
    s_re: f64,
    s_im: f64,
    q: u32,
    out: *mut usize,
) -> DhStatus {
    guard(|| {
        let family = family.as_ref().ok_or_else(|| null("family"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = FormKind::from_q(q as usize).map_err(lib_err)?;
        let s = base_point(family, s_re, s_im);
        let fiber = Fiber::new(&family.spec, &s, &family.config.solver_options()).map_err(lib_err)?;
        *out = fiber.harmonic_basis(kind).map_err(lib_err)?.vectors.len();
        Ok(DhStatus::Ok)
    })
}

/// Weil-Petersson entry `<rho_k, rho_l>` at the configured base point.
///
/// # Safety
/// `family` must be a live handle; `re` and `im` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dh_wp_metric(
    family: *const DhFamily,
    k: usize,
    l: usize,
    re: *mut f64,
    im: *mut f64,
) -> DhStatus {
    guard(|| {
        let family = family.as_ref().ok_or_else(|| null("family"))?;
        if re.is_null() || im.is_null() {
            return Err(null("output"));
        }
        let v = family.spec.wp_inner(&family.config.s0(), k, l).map_err(lib_err)?;
        *re = v.re;
        *im = v.im;
        Ok(DhStatus::Ok)
    })
}

fn base_point(family: &DhFamily, s_re: f64, s_im: f64) -> Vec<C64> {
    let mut s = vec![C64::new(0.0, 0.0); family.spec.base_dim()];
    s[0] = C64::new(s_re, s_im);
    s
}

/// Compares both sides of the curvature formula at the configured base point,
/// degree and step. Returns [`DhStatus::Tolerance`] together with a report
/// when the residual exceeds the configured bound.
///
/// # Safety
/// `family` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dh_verify_theorem(family: *const DhFamily, out: *mut *mut DhReport) -> DhStatus {
    guard(|| {
        let family = family.as_ref().ok_or_else(|| null("family"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = &family.config;
        let inner = dolhodge::verify_theorem(&family.spec, &c.s0(), c.q(), c.eta, &c.solver_options()).map_err(lib_err)?;
        let pass = inner.residual_rel <= c.tolerances.residual_rel;
        *out = Box::into_raw(Box::new(DhReport { inner }));
        if pass {
            Ok(DhStatus::Ok)
        } else {
            set_last_error("relative residual above tolerance".into());
            Ok(DhStatus::Tolerance)
        }
    })
}

/// Releases a report; null is ignored.
///
/// # Safety
/// `report` must be null or a handle from [`dh_verify_theorem`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dh_report_free(report: *mut DhReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Relative residual of the report.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dh_report_residual_rel(report: *const DhReport, out: *mut f64) -> DhStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = report.inner.residual_rel;
        Ok(DhStatus::Ok)
    })
}

/// Rank of the direct image in the report.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dh_report_rank(report: *const DhReport, out: *mut usize) -> DhStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = report.inner.rank;
        Ok(DhStatus::Ok)
    })
}

/// Entry `(rho, sigma, k, l)` of the finite-difference curvature (`which = 0`)
/// or of the term `T_which` (`which = 1..4`).
///
/// # Safety
/// `report` must be a live handle; `re` and `im` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dh_report_entry(
    report: *const DhReport,
    which: u32,
    rho: usize,
    sigma: usize,
    k: usize,
    l: usize,
    re: *mut f64,
    im: *mut f64,
) -> DhStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null("report"))?;
        if re.is_null() || im.is_null() {
            return Err(null("output"));
        }
        let r = &report.inner;
        let tensor = match which {
            0 => &r.lhs,
            1..=4 => r.terms.as_array()[which as usize - 1],
            _ => return Err((DhStatus::InvalidConfig, format!("tensor selector {which} out of range"))),
        };
        if rho >= r.rank || sigma >= r.rank || k >= r.base_dim || l >= r.base_dim {
            return Err((DhStatus::InvalidConfig, "tensor index out of range".into()));
        }
        let v = tensor.get(rho, sigma, k, l);
        *re = v.re;
        *im = v.im;
        Ok(DhStatus::Ok)
    })
}

/// JSON rendering of the report; release with [`dh_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dh_report_json(report: *const DhReport, out: *mut *mut c_char) -> DhStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let body = report::curvature(&report.inner, false);
        *out = into_c_string(report::render(&serde_json::Value::Object(body)));
        Ok(DhStatus::Ok)
    })
}

/// Runs a full command described by a JSON configuration (its `command` key
/// selects the experiment) and returns the report JSON, or the error object
/// on failure. The status mirrors the exit code of the command-line tool.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dh_run(config_json: *const c_char, out: *mut *mut c_char) -> DhStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(config_json, "config_json")?;
        let (value, status) = match RunConfig::from_json(text) {
            Err(e) => (report::error(None, None, &e), Err(lib_err(e))),
            Ok(config) => match cli::run(&config) {
                Ok(o) if o.pass => (o.report, Ok(DhStatus::Ok)),
                Ok(o) => {
                    set_last_error("an asserted tolerance failed".into());
                    (o.report, Ok(DhStatus::Tolerance))
                }
                Err(e) => (report::error(Some(config.command), Some(&config), &e), Err(lib_err(e))),
            },
        };
        *out = into_c_string(report::render(&value));
        status
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

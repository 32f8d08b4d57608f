//! C ABI over the `odos` library.
//!
//! Every entry point returns an [`OdosStatus`]. On failure the message is kept
//! per thread and can be read with [`odos_last_error_message`]. Configurations
//! are opaque handles created by [`odos_config_parse`] and released with
//! [`odos_config_free`]. Strings handed out by the library are released with
//! [`odos_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use odos::cli::{execute, finalize_report, Command, OptimizeOverrides, VERSION};
use odos::config::{parse_config, RunConfig};
use odos::error::OdosError;
use odos::models::ctmc::ctmc_transition_matrix;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdosStatus {
    Ok = 0,
    InvalidArgument = 1,
    Parse = 2,
    Validation = 3,
    Infeasible = 4,
    Numerical = 5,
    Io = 6,
    Internal = 7,
}

impl From<&OdosError> for OdosStatus {
    fn from(e: &OdosError) -> Self {
        use OdosError::*;
        match e {
            Parse { .. } | Json(_) => OdosStatus::Parse,
            Validation(_) | InvalidFrame(_) | InvalidDesign(_) | InvalidModel(_) | IncompatibleData(_)
            | IndexOutOfBounds { .. } | DuplicateEntry { .. } | NotAdmissible { .. } | NonFiniteValue { .. }
            | MissingHierarchy | DimensionMismatch { .. } | InvalidGrid(_) => OdosStatus::Validation,
            Infeasible(_) | PoolExhausted(_) | SpaceTooLarge { .. } | SupportTooLarge { .. } => OdosStatus::Infeasible,
            DegenerateWeights { .. } | SingularMatrix { .. } => OdosStatus::Numerical,
            InvalidArgument(_) => OdosStatus::InvalidArgument,
            Io(_) | Csv(_) => OdosStatus::Io,
        }
    }
}

/// Expected utility with its Monte Carlo standard error.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdosEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

/// Value of information of the configured design.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdosVoi {
    pub value: f64,
    pub baseline: f64,
    pub std_error: f64,
    /// 1 when the value strictly exceeds the expected cost, else 0.
    pub eligible: i32,
    /// 1 when a negative estimate was clamped to zero.
    pub clamped: i32,
}

/// Opaque parsed configuration.
pub struct OdosConfig {
    cfg: RunConfig,
    base: PathBuf,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard<F>(f: F) -> OdosStatus
where
    F: FnOnce() -> Result<(), (OdosStatus, String)>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OdosStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OdosStatus::Internal
        }
    }
}

fn lib_err(e: OdosError) -> (OdosStatus, String) {
    ((&e).into(), e.to_string())
}

fn bad_arg(msg: &str) -> (OdosStatus, String) {
    (OdosStatus::InvalidArgument, msg.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (OdosStatus, String)> {
    if p.is_null() {
        return Err(bad_arg(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| bad_arg(&format!("{what} is not valid UTF-8")))
}

unsafe fn config_ref<'a>(p: *const OdosConfig) -> Result<&'a OdosConfig, (OdosStatus, String)> {
    p.as_ref().ok_or_else(|| bad_arg("config handle is null"))
}

fn parse_command(text: &str) -> Result<Command, (OdosStatus, String)> {
    let mut words = text.split_whitespace();
    let cmd = match (words.next(), words.next()) {
        (Some("evaluate"), None) => Command::Evaluate,
        (Some("optimize"), None) => Command::Optimize(OptimizeOverrides::default()),
        (Some("voi"), None) => Command::Voi,
        (Some("scenario"), Some(name)) => Command::Scenario(name.to_string()),
        _ => return Err(bad_arg(&format!("unknown command '{text}'"))),
    };
    if words.next().is_some() {
        return Err(bad_arg(&format!("unknown command '{text}'")));
    }
    Ok(cmd)
}

/// Library version as a static NUL-terminated string. Never free it.
#[no_mangle]
pub extern "C" fn odos_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    debug_assert_eq!(&V[..V.len() - 1], VERSION);
    V.as_ptr().cast()
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn odos_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a JSON configuration into a new handle.
///
/// `base_dir` anchors relative data paths and may be null for the working directory.
///
/// # Safety
/// `json` must be a NUL-terminated string, `base_dir` null or NUL-terminated,
/// and `out` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn odos_config_parse(
    json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut OdosConfig,
) -> OdosStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("out is null"));
        }
        *out = ptr::null_mut();
        let text = read_str(json, "json")?;
        let base = if base_dir.is_null() {
            PathBuf::from(".")
        } else {
            PathBuf::from(read_str(base_dir, "base_dir")?)
        };
        let cfg = parse_config(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(OdosConfig { cfg, base }));
        Ok(())
    })
}

/// Releases a handle from [`odos_config_parse`]. Null is ignored.
///
/// # Safety
/// `config` must come from [`odos_config_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn odos_config_free(config: *mut OdosConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Replaces the master seed of a configuration.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn odos_config_set_seed(config: *mut OdosConfig, seed: u64) -> OdosStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| bad_arg("config handle is null"))?;
        c.cfg.seed = seed;
        Ok(())
    })
}

/// Runs `evaluate`, `optimize`, `voi` or `scenario <name>` and returns the
/// report as JSON. The report carries no timestamp, so equal inputs give
/// identical bytes. Release the string with [`odos_string_free`].
///
/// # Safety
/// `config` must be a live handle, `command` NUL-terminated and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn odos_run(
    config: *const OdosConfig,
    command: *const c_char,
    out_json: *mut *mut c_char,
) -> OdosStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(bad_arg("out_json is null"));
        }
        *out_json = ptr::null_mut();
        let c = config_ref(config)?;
        let cmd = parse_command(read_str(command, "command")?)?;
        let output = execute(&c.cfg, &cmd, &c.base).map_err(lib_err)?;
        let report = finalize_report(&c.cfg, &cmd, &output, None);
        let text = serde_json::to_string_pretty(&report).map_err(|e| lib_err(e.into()))?;
        *out_json = CString::new(text)
            .map_err(|_| (OdosStatus::Internal, "report contains NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn odos_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn field(v: &serde_json::Value, key: &str) -> f64 {
    v.get(key).and_then(|x| x.as_f64()).unwrap_or(f64::NAN)
}

/// Expected utility of the configured design.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn odos_evaluate(config: *const OdosConfig, out: *mut OdosEstimate) -> OdosStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| bad_arg("out is null"))?;
        let c = config_ref(config)?;
        let run = execute(&c.cfg, &Command::Evaluate, &c.base).map_err(lib_err)?;
        let u = &run.report["utility"];
        *out = OdosEstimate {
            mean: field(u, "mean"),
            std_error: field(u, "std_error"),
            n_samples: u.get("n_samples").and_then(|x| x.as_u64()).unwrap_or(0),
        };
        Ok(())
    })
}

/// Value of information of the configured design.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn odos_voi(config: *const OdosConfig, out: *mut OdosVoi) -> OdosStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| bad_arg("out is null"))?;
        let c = config_ref(config)?;
        let run = execute(&c.cfg, &Command::Voi, &c.base).map_err(lib_err)?;
        let r = &run.report;
        *out = OdosVoi {
            value: field(r, "value"),
            baseline: field(r, "baseline"),
            std_error: field(r, "std_error"),
            eligible: r.get("eligible").and_then(|x| x.as_bool()).map_or(0, i32::from),
            clamped: r.get("warning").and_then(|x| x.as_bool()).map_or(0, i32::from),
        };
        Ok(())
    })
}

/// Transition matrix of the two-state chain over `dt`, written row-major to `out`.
///
/// # Safety
/// `out` must point to four writable doubles.
#[no_mangle]
pub unsafe extern "C" fn odos_ctmc_transition(lambda: f64, mu: f64, dt: f64, out: *mut f64) -> OdosStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("out is null"));
        }
        let m = ctmc_transition_matrix(lambda, mu, dt).map_err(lib_err)?;
        let cells = std::slice::from_raw_parts_mut(out, 4);
        cells.copy_from_slice(&[m.p[0][0], m.p[0][1], m.p[1][0], m.p[1][1]]);
        Ok(())
    })
}

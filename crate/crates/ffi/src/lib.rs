//! C ABI over the `multiflock` library.
//!
//! Conventions:
//!
//! * every fallible function returns an [`MfStatus`]; on failure a message is
//!   available from [`mf_last_error`] on the same thread
//! * objects are opaque handles created by `*_new`/`*_from_*` functions and
//!   released with the matching `*_free`; freeing `NULL` is a no-op
//! * strings returned to the caller are released with [`mf_string_free`]
//! * agent coordinates are copied out in the library's flock-major
//!   structure-of-arrays layout: component `k` of agent `i` at `k * n + i`

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use multiflock::integrate::integrate_partial;
use multiflock::mfstate::MultiFlockState;
use multiflock::scenario::{self, Scenario};
use multiflock::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Unparsable scenario, unknown preset or bad override.
    Config = 3,
    /// Scenario parsed but failed validation.
    Validation = 4,
    Io = 5,
    /// Collision, blow-up or other solver failure.
    Solver = 6,
    Unsupported = 7,
    OutOfRange = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

/// A parsed, validated scenario.
pub struct MfScenario {
    inner: Scenario,
}

/// A multi-flock phase state.
pub struct MfState {
    inner: MultiFlockState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MfStatus {
    match e {
        Error::Config(_) | Error::Invalid(_) => MfStatus::Config,
        Error::Validation(_) => MfStatus::Validation,
        Error::Io(_) => MfStatus::Io,
        Error::Unsupported(_) => MfStatus::Unsupported,
        _ => MfStatus::Solver,
    }
}

fn fail(status: MfStatus, msg: &str) -> MfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), MfStatus>) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MfStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(MfStatus::Panic, "panic caught at the C boundary"),
    }
}

fn lib<T>(r: multiflock::Result<T>) -> Result<T, MfStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, MfStatus> {
    if p.is_null() {
        return Err(fail(MfStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MfStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, MfStatus> {
    p.as_ref().ok_or_else(|| fail(MfStatus::NullPointer, "null handle"))
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, MfStatus> {
    p.as_mut().ok_or_else(|| fail(MfStatus::NullPointer, "null handle"))
}

unsafe fn out<T>(p: *mut T, v: T) -> Result<(), MfStatus> {
    if p.is_null() {
        return Err(fail(MfStatus::NullPointer, "null output pointer"));
    }
    p.write(v);
    Ok(())
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call into the library.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn boxed_scenario(s: Scenario) -> *mut MfScenario {
    Box::into_raw(Box::new(MfScenario { inner: s }))
}

/// Parses and validates a scenario from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; output pointer writable.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_from_toml(toml: *const c_char, out_scenario: *mut *mut MfScenario) -> MfStatus {
    guard(|| {
        let s = lib(Scenario::from_toml(text(toml)?))?;
        out(out_scenario, boxed_scenario(s))
    })
}

/// Loads a built-in preset by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; output pointer writable.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_from_preset(name: *const c_char, out_scenario: *mut *mut MfScenario) -> MfStatus {
    guard(|| {
        let s = lib(scenario::preset(text(name)?))?;
        out(out_scenario, boxed_scenario(s))
    })
}

/// # Safety
/// `s` must be `NULL` or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_free(s: *mut MfScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Sets a dotted key (`coupling.epsilon`, `flocks.0.lambda`) to a TOML
/// literal and revalidates. The scenario is unchanged on failure.
///
/// # Safety
/// Valid handle and NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_set(s: *mut MfScenario, key: *const c_char, value: *const c_char) -> MfStatus {
    guard(|| {
        let sc = handle_mut(s)?;
        let (key, value) = (text(key)?, text(value)?);
        let mut tree = toml::Value::try_from(&sc.inner).map_err(|e| fail(MfStatus::Config, &e.to_string()))?;
        lib(scenario::set_key(&mut tree, key, value))?;
        let rendered = toml::to_string(&tree).map_err(|e| fail(MfStatus::Config, &e.to_string()))?;
        sc.inner = lib(Scenario::from_toml(&rendered))?;
        Ok(())
    })
}

/// Canonical TOML of the scenario; release with [`mf_string_free`].
///
/// # Safety
/// Valid handle; output pointer writable.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_to_toml(s: *const MfScenario, out_text: *mut *mut c_char) -> MfStatus {
    guard(|| {
        let t = lib(handle(s)?.inner.to_canonical_toml())?;
        let c = CString::new(t).map_err(|_| fail(MfStatus::Config, "canonical TOML contains NUL"))?;
        out(out_text, c.into_raw())
    })
}

/// Runs the scenario into `out_dir`, writing the usual artifacts.
/// `threads = 0` uses the default worker count. `exit_code` receives the
/// run's exit code (0 success, 1 solver failure recorded in the manifest).
///
/// # Safety
/// Valid handle, NUL-terminated path, writable `exit_code`.
#[no_mangle]
pub unsafe extern "C" fn mf_run(s: *const MfScenario, out_dir: *const c_char, threads: usize, exit_code: *mut i32) -> MfStatus {
    guard(|| {
        let sc = handle(s)?;
        let dir = text(out_dir)?;
        let threads = (threads > 0).then_some(threads);
        let m = lib(scenario::run_scenario(&sc.inner, Path::new(dir), threads))?;
        out(exit_code, m.exit_code)
    })
}

/// Samples the scenario's initial agent state (not available for hydro
/// scenarios).
///
/// # Safety
/// Valid handle; output pointer writable.
#[no_mangle]
pub unsafe extern "C" fn mf_state_initial(s: *const MfScenario, out_state: *mut *mut MfState) -> MfStatus {
    guard(|| {
        let sc = handle(s)?;
        if sc.inner.is_hydro() {
            return Err(fail(MfStatus::Unsupported, "hydro scenarios have no agent state"));
        }
        let st = lib(scenario::initial_state(&sc.inner))?;
        out(out_state, Box::into_raw(Box::new(MfState { inner: st })))
    })
}

/// # Safety
/// `st` must be `NULL` or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mf_state_free(st: *mut MfState) {
    if !st.is_null() {
        drop(Box::from_raw(st));
    }
}

/// Dimension, number of flocks and current time.
///
/// # Safety
/// Valid handle; writable outputs.
#[no_mangle]
pub unsafe extern "C" fn mf_state_info(st: *const MfState, dim: *mut usize, num_flocks: *mut usize, time: *mut f64) -> MfStatus {
    guard(|| {
        let s = &handle(st)?.inner;
        out(dim, s.dim)?;
        out(num_flocks, s.flocks.len())?;
        out(time, s.time)
    })
}

/// Number of agents of flock `alpha`.
///
/// # Safety
/// Valid handle; writable output.
#[no_mangle]
pub unsafe extern "C" fn mf_state_flock_len(st: *const MfState, alpha: usize, len: *mut usize) -> MfStatus {
    guard(|| {
        let s = &handle(st)?.inner;
        let f = s.flocks.get(alpha).ok_or_else(|| fail(MfStatus::OutOfRange, &format!("no flock {alpha}")))?;
        out(len, f.len())
    })
}

unsafe fn copy_field(st: *const MfState, alpha: usize, buf: *mut f64, cap: usize, pick: fn(&multiflock::mfstate::Flock) -> &[f64]) -> MfStatus {
    guard(|| {
        let s = &handle(st)?.inner;
        let f = s.flocks.get(alpha).ok_or_else(|| fail(MfStatus::OutOfRange, &format!("no flock {alpha}")))?;
        let src = pick(f);
        if buf.is_null() {
            return Err(fail(MfStatus::NullPointer, "null buffer"));
        }
        if cap < src.len() {
            return Err(fail(MfStatus::OutOfRange, &format!("buffer holds {cap} values, need {}", src.len())));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// Copies the `dim * n` positions of flock `alpha` into `buf`.
///
/// # Safety
/// Valid handle; `buf` writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mf_state_positions(st: *const MfState, alpha: usize, buf: *mut f64, cap: usize) -> MfStatus {
    copy_field(st, alpha, buf, cap, |f| &f.positions)
}

/// Copies the `dim * n` velocities of flock `alpha` into `buf`.
///
/// # Safety
/// Valid handle; `buf` writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mf_state_velocities(st: *const MfState, alpha: usize, buf: *mut f64, cap: usize) -> MfStatus {
    copy_field(st, alpha, buf, cap, |f| &f.velocities)
}

/// Advances the state to `t_end` with the scenario's model and integrator.
/// On solver failure the state holds the last accepted step.
///
/// # Safety
/// Valid handles.
#[no_mangle]
pub unsafe extern "C" fn mf_state_advance(st: *mut MfState, s: *const MfScenario, t_end: f64) -> MfStatus {
    guard(|| {
        let sc = handle(s)?;
        let state = handle_mut(st)?;
        if !(t_end >= state.inner.time) {
            return Err(fail(MfStatus::OutOfRange, &format!("t_end {t_end} precedes the state time {}", state.inner.time)));
        }
        let params = lib(sc.inner.model_params())?;
        let mut spec = sc.inner.integrator.clone();
        spec.t_end = t_end;
        let run = lib(integrate_partial(&state.inner, &params, &spec, &[]))?;
        state.inner = run.last.clone();
        lib(run.into_result()).map(|_| ())
    })
}

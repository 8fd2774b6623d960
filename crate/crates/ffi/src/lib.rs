//! C interface: load and validate scenarios, run them, read back summary
//! counters. Every handle is opaque and owned by the caller until passed
//! to its `_free` function. Functions return a [`CbStatus`]; on failure
//! [`cb_last_error`] holds a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use corebench::cpli::OutcomeStatus;
use corebench::orchestrator::{run_experiment, ExperimentResult, OrchestratorError, RunOptions};
use corebench::scenario::{load_scenario, parse_scenario, validate_scenario, Scenario, ScenarioError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Invalid = 5,
    Run = 6,
    Panic = 7,
}

/// A parsed scenario.
pub struct CbScenario(Scenario);

/// The outcome of one run.
pub struct CbResult(ExperimentResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let c = CString::new(message.into().replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CbStatus, message: impl Into<String>) -> CbStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> CbStatus) -> CbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(CbStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, CbStatus> {
    if p.is_null() {
        return Err(fail(CbStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(CbStatus::InvalidUtf8, "argument is not UTF-8"))
}

fn scenario_status(e: &ScenarioError) -> CbStatus {
    match e {
        ScenarioError::Io { .. } => CbStatus::Io,
        _ => CbStatus::Parse,
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn cb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a scenario file. Relative dataset paths resolve against the
/// file's directory.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cb_scenario_load(path: *const c_char, out: *mut *mut CbScenario) -> CbStatus {
    guard(|| {
        if out.is_null() {
            return fail(CbStatus::NullArgument, "null out pointer");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scenario(&PathBuf::from(path)) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(CbScenario(s)));
                CbStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

/// Parses a scenario from a JSON document.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cb_scenario_parse(json: *const c_char, out: *mut *mut CbScenario) -> CbStatus {
    guard(|| {
        if out.is_null() {
            return fail(CbStatus::NullArgument, "null out pointer");
        }
        let json = match str_arg(json) {
            Ok(j) => j,
            Err(s) => return s,
        };
        match parse_scenario(json) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(CbScenario(s)));
                CbStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

/// `CB_STATUS_OK` when the scenario passes validation, otherwise
/// `CB_STATUS_INVALID` with every violation in the error message.
///
/// # Safety
/// `scenario` must come from `cb_scenario_load` or `cb_scenario_parse`.
#[no_mangle]
pub unsafe extern "C" fn cb_scenario_validate(scenario: *const CbScenario) -> CbStatus {
    guard(|| {
        let Some(s) = scenario.as_ref() else {
            return fail(CbStatus::NullArgument, "null scenario");
        };
        let report = validate_scenario(&s.0);
        if report.is_empty() {
            CbStatus::Ok
        } else {
            fail(CbStatus::Invalid, report.to_string())
        }
    })
}

/// Overrides the scenario seed.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cb_scenario_set_seed(scenario: *mut CbScenario, seed: u64) -> CbStatus {
    guard(|| match scenario.as_mut() {
        Some(s) => {
            s.0.seed = seed;
            CbStatus::Ok
        }
        None => fail(CbStatus::NullArgument, "null scenario"),
    })
}

/// # Safety
/// `scenario` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cb_scenario_free(scenario: *mut CbScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the scenario. When `out_dir` is non-null the dataset is exported
/// there. An aborted run still yields a result; check
/// `cb_result_completed`.
///
/// # Safety
/// `scenario` must be a live handle, `out_dir` null or a valid string,
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cb_run(scenario: *const CbScenario, out_dir: *const c_char, out: *mut *mut CbResult) -> CbStatus {
    guard(|| {
        let Some(s) = scenario.as_ref() else {
            return fail(CbStatus::NullArgument, "null scenario");
        };
        if out.is_null() {
            return fail(CbStatus::NullArgument, "null out pointer");
        }
        let mut opts = RunOptions::default();
        if !out_dir.is_null() {
            match str_arg(out_dir) {
                Ok(d) => opts.out_dir = Some(PathBuf::from(d)),
                Err(st) => return st,
            }
        }
        match run_experiment(&s.0, &opts) {
            Ok(r) => {
                if let corebench::orchestrator::ExitStatus::Aborted { reason } = &r.exit {
                    set_error(reason.clone());
                }
                *out = Box::into_raw(Box::new(CbResult(r)));
                CbStatus::Ok
            }
            Err(e @ OrchestratorError::Invalid(_)) => fail(CbStatus::Invalid, e.to_string()),
            Err(e) => fail(CbStatus::Run, e.to_string()),
        }
    })
}

/// 1 when the run completed, 0 when it aborted or `result` is null.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cb_result_completed(result: *const CbResult) -> i32 {
    result.as_ref().map_or(0, |r| r.0.exit.is_completed() as i32)
}

/// Requests scheduled by the control-plane injector.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cb_result_requests(result: *const CbResult) -> u64 {
    result.as_ref().map_or(0, |r| r.0.outcomes.len() as u64)
}

/// Requests that completed successfully.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cb_result_successes(result: *const CbResult) -> u64 {
    result.as_ref().map_or(0, |r| r.0.outcomes.iter().filter(|o| o.status == OutcomeStatus::Success).count() as u64)
}

/// User-plane packets sent.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cb_result_packets(result: *const CbResult) -> u64 {
    result.as_ref().map_or(0, |r| r.0.up_stats.packets)
}

/// Telemetry samples over all monitored functions.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cb_result_samples(result: *const CbResult) -> u64 {
    result.as_ref().map_or(0, |r| r.0.dataset.samples.len() as u64)
}

/// # Safety
/// `result` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cb_result_free(result: *mut CbResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

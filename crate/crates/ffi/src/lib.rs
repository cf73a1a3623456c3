//! C ABI over the simulator.
//!
//! Every fallible function returns an [`ApsStatus`]; on failure the message
//! is available from [`aps_last_error_message`] on the same thread. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with [`aps_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aps_testbed::analytics::trace_outcomes;
use aps_testbed::controllers::{derive_dosing_params, Rationale};
use aps_testbed::engine::spec::ExperimentSpec;
use aps_testbed::engine::{ClosedLoop, TraceRecord};
use aps_testbed::faults::campaign::CampaignFile;
use aps_testbed::schema::{parse_json, to_json_pretty};
use aps_testbed::trace_csv::TraceFile;
use aps_testbed::Error;

/// Status codes. Negative values are errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApsStatus {
    Ok = 0,
    /// The simulation has no steps left.
    Done = 1,
    NullPointer = -1,
    InvalidUtf8 = -2,
    Config = -3,
    Runtime = -4,
    Io = -5,
    OutOfRange = -6,
    Panic = -7,
}

/// One control step of a trace.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ApsTraceRow {
    /// min
    pub t: f64,
    /// mg/dL
    pub bg_true: f64,
    /// mg/dL
    pub cgm: f64,
    /// U/hr
    pub basal_cmd: f64,
    /// U
    pub bolus_cmd: f64,
    /// U/min
    pub delivered: f64,
    /// U
    pub iob: f64,
    /// g
    pub cho: f64,
    pub fault_active: bool,
    /// Index into the rationale table; see [`aps_rationale_name`].
    pub rationale: i32,
}

/// Time-in-range breakdown, percent of samples.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ApsOutcomes {
    pub samples: usize,
    pub pct_in_range: f64,
    pub pct_above_180: f64,
    pub pct_below_70: f64,
    pub pct_below_54: f64,
    pub pct_above_250: f64,
    pub mean_bg: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ApsDosingParams {
    /// U/day
    pub tdd: f64,
    /// g/U
    pub cr: f64,
    /// mg/dL per U
    pub cf: f64,
    /// mg/dL per U
    pub isf: f64,
}

/// Opaque simulation handle.
pub struct ApsSimulation {
    sim: ClosedLoop,
    records: Vec<TraceRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: ApsStatus, msg: impl Into<String>) -> ApsStatus {
    set_error(msg);
    status
}

fn from_error(err: &Error) -> ApsStatus {
    let status = match err {
        Error::Io { .. } => ApsStatus::Io,
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::NonFinite { .. } | Error::Trace(_) => {
            ApsStatus::Config
        }
        Error::NonFiniteState { .. } | Error::InsufficientHistory { .. } | Error::Unidentifiable(_) => {
            ApsStatus::Runtime
        }
    };
    fail(status, err.to_string())
}

/// Runs `f`, turning panics into [`ApsStatus::Panic`].
fn guard(f: impl FnOnce() -> ApsStatus) -> ApsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(ApsStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, ApsStatus> {
    if s.is_null() {
        return Err(fail(ApsStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(ApsStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

fn into_c_string(s: String, out: *mut *mut c_char) -> ApsStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            ApsStatus::Ok
        }
        Err(_) => fail(ApsStatus::Runtime, "output contains a nul byte"),
    }
}

fn rationale_index(r: Rationale) -> i32 {
    Rationale::ALL.iter().position(|x| *x == r).expect("listed rationale") as i32
}

fn row(r: &TraceRecord) -> ApsTraceRow {
    ApsTraceRow {
        t: r.t,
        bg_true: r.bg_true,
        cgm: r.cgm,
        basal_cmd: r.basal_cmd,
        bolus_cmd: r.bolus_cmd,
        delivered: r.delivered,
        iob: r.iob,
        cho: r.cho,
        fault_active: r.fault_active,
        rationale: rationale_index(r.rationale),
    }
}

/// Builds a simulation from an experiment JSON document. Profile file
/// references are resolved against the working directory.
///
/// # Safety
/// `spec_json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_new(spec_json: *const c_char, out: *mut *mut ApsSimulation) -> ApsStatus {
    guard(|| {
        if out.is_null() {
            return fail(ApsStatus::NullPointer, "null out pointer");
        }
        *out = ptr::null_mut();
        let text = match read_str(spec_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let built = parse_json::<ExperimentSpec>(text).and_then(|spec| ClosedLoop::from_spec(&spec, None));
        match built {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(ApsSimulation {
                    records: Vec::with_capacity(sim.total_steps()),
                    sim,
                }));
                ApsStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Advances one control step. Returns `Done` once the experiment is over.
/// `row_out` may be null.
///
/// # Safety
/// `sim` must come from [`aps_simulation_new`]; `row_out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_step(sim: *mut ApsSimulation, row_out: *mut ApsTraceRow) -> ApsStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(ApsStatus::NullPointer, "null simulation");
        };
        match sim.sim.step() {
            Ok(Some(r)) => {
                if !row_out.is_null() {
                    *row_out = row(&r);
                }
                sim.records.push(r);
                ApsStatus::Ok
            }
            Ok(None) => ApsStatus::Done,
            Err(e) => from_error(&e),
        }
    })
}

/// Runs the remaining steps.
///
/// # Safety
/// `sim` must come from [`aps_simulation_new`].
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_run(sim: *mut ApsSimulation) -> ApsStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(ApsStatus::NullPointer, "null simulation");
        };
        loop {
            match sim.sim.step() {
                Ok(Some(r)) => sim.records.push(r),
                Ok(None) => return ApsStatus::Ok,
                Err(e) => return from_error(&e),
            }
        }
    })
}

/// Number of rows recorded so far; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or come from [`aps_simulation_new`].
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_len(sim: *const ApsSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.records.len())
}

/// # Safety
/// `sim` must come from [`aps_simulation_new`] and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_row(sim: *const ApsSimulation, index: usize, out: *mut ApsTraceRow) -> ApsStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            return fail(ApsStatus::NullPointer, "null argument");
        };
        match sim.records.get(index) {
            Some(r) => {
                *out = row(r);
                ApsStatus::Ok
            }
            None => fail(
                ApsStatus::OutOfRange,
                format!("row {index} out of range for {} rows", sim.records.len()),
            ),
        }
    })
}

/// Outcomes of the rows recorded so far.
///
/// # Safety
/// `sim` must come from [`aps_simulation_new`] and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_outcomes(sim: *const ApsSimulation, out: *mut ApsOutcomes) -> ApsStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            return fail(ApsStatus::NullPointer, "null argument");
        };
        match trace_outcomes(&sim.records) {
            Ok(o) => {
                *out = ApsOutcomes {
                    samples: o.samples,
                    pct_in_range: o.pct_in_range,
                    pct_above_180: o.pct_above_180,
                    pct_below_70: o.pct_below_70,
                    pct_below_54: o.pct_below_54,
                    pct_above_250: o.pct_above_250,
                    mean_bg: o.mean_bg,
                };
                ApsStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// The recorded rows as trace CSV, with the experiment embedded.
///
/// # Safety
/// `sim` must come from [`aps_simulation_new`] and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_trace_csv(sim: *const ApsSimulation, out: *mut *mut c_char) -> ApsStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            return fail(ApsStatus::NullPointer, "null argument");
        };
        let file = TraceFile::new(Some(sim.sim.spec().clone()), sim.records.clone());
        into_c_string(file.to_csv(), out)
    })
}

/// # Safety
/// `sim` must be null or come from [`aps_simulation_new`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aps_simulation_free(sim: *mut ApsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn aps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Dosing parameters from body weight (kg).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aps_derive_dosing_params(body_weight: f64, out: *mut ApsDosingParams) -> ApsStatus {
    guard(|| {
        if out.is_null() {
            return fail(ApsStatus::NullPointer, "null out pointer");
        }
        match derive_dosing_params(body_weight) {
            Ok(d) => {
                *out = ApsDosingParams {
                    tdd: d.tdd,
                    cr: d.cr,
                    cf: d.cf,
                    isf: d.isf,
                };
                ApsStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Expands a campaign document into a JSON array of experiment specs.
///
/// # Safety
/// `campaign_json` must be a nul-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn aps_campaign_expand(campaign_json: *const c_char, out: *mut *mut c_char) -> ApsStatus {
    guard(|| {
        if out.is_null() {
            return fail(ApsStatus::NullPointer, "null out pointer");
        }
        *out = ptr::null_mut();
        let text = match read_str(campaign_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_json::<CampaignFile>(text).and_then(|c| c.expand()) {
            Ok(specs) => into_c_string(to_json_pretty(&specs), out),
            Err(e) => from_error(&e),
        }
    })
}

/// Name of a rationale index, or null when out of range. The string is static.
#[no_mangle]
pub extern "C" fn aps_rationale_name(index: i32) -> *const c_char {
    static NAMES: std::sync::OnceLock<Vec<CString>> = std::sync::OnceLock::new();
    let names = NAMES.get_or_init(|| {
        Rationale::ALL
            .iter()
            .map(|r| CString::new(r.as_str()).expect("ascii name"))
            .collect()
    });
    usize::try_from(index)
        .ok()
        .and_then(|i| names.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Message of the last error on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn aps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn aps_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

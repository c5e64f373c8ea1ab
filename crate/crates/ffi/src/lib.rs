//! C interface to the protcomp composition engine.
//!
//! Handles are opaque and owned by the caller; free them with the matching
//! `*_free`. Every fallible call returns a [`PcStatus`]. On failure the
//! message is available from [`pc_last_error_message`] on the same thread.
//! Strings returned through out-pointers must be released with
//! [`pc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use protcomp::composer::{compose, tamper_check, CompositionConfig};
use protcomp::program::{generate_program, load_program, InstrId};
use protcomp::{CompositionResult, Error, ProgramModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Infeasible = 6,
    TimedOut = 7,
    /// Cycle left after selection, false alarm, or inconsistent finalization.
    Conflict = 8,
    UnknownInstruction = 9,
    /// Any other engine error, or a caught panic.
    Internal = 10,
}

/// Program model handle.
pub struct PcProgram(ProgramModel);

/// Composition result handle.
pub struct PcResult(CompositionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PcStatus {
    match e {
        Error::Io { .. } => PcStatus::Io,
        Error::Parse(_) => PcStatus::Parse,
        Error::Validation(_) | Error::UnknownKind(_) => PcStatus::Validation,
        Error::InfeasibleRequirements => PcStatus::Infeasible,
        Error::SolverTimedOut => PcStatus::TimedOut,
        Error::CycleRemains(_) | Error::FalseAlarm(_) | Error::FinalizationInconsistent(_) => {
            PcStatus::Conflict
        }
        Error::UnknownInstruction(_) => PcStatus::UnknownInstruction,
        _ => PcStatus::Internal,
    }
}

struct Fail(PcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.code()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal: panic inside protcomp".into());
            PcStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(
            PcStatus::NullArgument,
            format!("null argument: {name}"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(PcStatus::NullArgument, format!("null argument: {name}")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(
            PcStatus::NullArgument,
            format!("null argument: {name}"),
        ))
    } else {
        Ok(())
    }
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next protcomp call on the same thread.
#[no_mangle]
pub extern "C" fn pc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a program model from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_program_load(
    path: *const c_char,
    out: *mut *mut PcProgram,
) -> PcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let p = load_program(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PcProgram(p)));
        Ok(())
    })
}

/// Parse a program model from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_program_from_json(
    json: *const c_char,
    out: *mut *mut PcProgram,
) -> PcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let p = ProgramModel::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(PcProgram(p)));
        Ok(())
    })
}

/// Seeded synthetic program.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_program_generate(
    seed: u64,
    functions: usize,
    blocks: usize,
    det_ratio: f64,
    out: *mut *mut PcProgram,
) -> PcStatus {
    guard(|| {
        out_arg(out, "out")?;
        if functions == 0 || blocks == 0 || !(0.0..=1.0).contains(&det_ratio) {
            return Err(Error::Validation(
                "functions and blocks must be >= 1, det_ratio in [0, 1]".into(),
            )
            .into());
        }
        *out = Box::into_raw(Box::new(PcProgram(generate_program(
            seed, functions, blocks, det_ratio,
        ))));
        Ok(())
    })
}

/// # Safety
/// `program` must come from a `pc_program_*` constructor, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pc_program_free(program: *mut PcProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Program model as JSON.
///
/// # Safety
/// `program` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_program_to_json(
    program: *const PcProgram,
    out: *mut *mut c_char,
) -> PcStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = to_c(ref_arg(program, "program")?.0.to_json());
        Ok(())
    })
}

/// Run the full pipeline. `config_json` may be NULL for defaults.
///
/// # Safety
/// `program` must be a live handle; `config_json` NULL or NUL-terminated;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_compose(
    program: *const PcProgram,
    config_json: *const c_char,
    out: *mut *mut PcResult,
) -> PcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let p = ref_arg(program, "program")?;
        let cfg = if config_json.is_null() {
            CompositionConfig::default()
        } else {
            CompositionConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        *out = Box::into_raw(Box::new(PcResult(compose(&p.0, &cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `result` must come from [`pc_compose`], or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pc_result_free(result: *mut PcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of selected manifests, or 0 for NULL.
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pc_result_selected_count(result: *const PcResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.selected.len())
}

/// Composition report as JSON.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_result_report_json(
    result: *const PcResult,
    out: *mut *mut c_char,
) -> PcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let r = ref_arg(result, "result")?;
        let text = serde_json::to_string_pretty(&r.0.report())
            .map_err(|e| Fail(PcStatus::Internal, e.to_string()))?;
        *out = to_c(text);
        Ok(())
    })
}

/// Protected program, selected manifests and patch slots as JSON.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_result_protected_json(
    result: *const PcResult,
    out: *mut *mut c_char,
) -> PcStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = to_c(ref_arg(result, "result")?.0.protected_file().to_json());
        Ok(())
    })
}

/// Ids of the manifests whose guards notice a change to `instruction`.
/// Writes up to `cap` ids into `ids` (which may be NULL when `cap` is 0) and
/// the total count into `count`.
///
/// # Safety
/// `result` must be a live handle; `ids` must hold `cap` elements; `count`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_tamper(
    result: *const PcResult,
    instruction: u32,
    ids: *mut u32,
    cap: usize,
    count: *mut usize,
) -> PcStatus {
    guard(|| {
        out_arg(count, "count")?;
        if cap > 0 {
            out_arg(ids, "ids")?;
        }
        let hits = tamper_check(&ref_arg(result, "result")?.0, InstrId(instruction))?;
        for (k, m) in hits.iter().take(cap).enumerate() {
            *ids.add(k) = m.0;
        }
        *count = hits.len();
        Ok(())
    })
}

/// # Safety
/// `s` must be a string returned by this library, or NULL.
#[no_mangle]
pub unsafe extern "C" fn pc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

//! C ABI over the core crate.
//!
//! Every function returns a [`StgStatus`]. On failure a message is kept in
//! thread-local storage and read back with [`stg_last_error`]. Strings
//! handed out through `char **` outputs are owned by the caller and must be
//! released with [`stg_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stepguard::codec::{self, StructuredResult};
use stepguard::eval;
use stepguard::privacy::{self, CollisionPolicy, PlaceholderMemory, PrivacyError, RuleDetector};
use stepguard::replay::{self, ReplayConfig};
use stepguard::sim::Scenario;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    PrivacyViolation = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StgConfig {
    Baseline = 0,
    Fea = 1,
    FeaCom = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StgResultKind {
    Feasibility = 0,
    Completeness = 1,
    Locate = 2,
}

/// Decoded structured reply. `bit` is meaningful for the two verdict
/// kinds, `bbox` (x_min, y_min, x_max, y_max) for locate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StgStructuredResult {
    pub kind: StgResultKind,
    pub bit: u8,
    pub bbox: [u32; 4],
}

/// Metrics from [`stg_compute_metrics`]. `has_positive` is 0 when no label
/// is positive, in which case `average_precision` and `f1` are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StgMetrics {
    pub accuracy: f64,
    pub average_precision: f64,
    pub f1: f64,
    pub has_positive: u8,
}

/// Opaque parsed scenario.
pub struct StgScenario(Scenario);

/// Opaque placeholder memory.
pub struct StgMemory(PlaceholderMemory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StgStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            StgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(StgStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(StgStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn null(name: &str) -> Failure {
    Failure(StgStatus::NullArgument, format!("{name} is null"))
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(StgStatus::InvalidInput, "output contains a nul byte".into()))
}

fn privacy_failure(e: PrivacyError) -> Failure {
    let status = match e {
        PrivacyError::Violation { .. } => StgStatus::PrivacyViolation,
        PrivacyError::Io { .. } => StgStatus::Io,
        _ => StgStatus::InvalidInput,
    };
    Failure(status, e.to_string())
}

/// Message for the most recent failure on this thread, or null. Valid
/// until the next `stg_*` call on the same thread.
#[no_mangle]
pub extern "C" fn stg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn stg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse and validate a scenario from JSON.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stg_scenario_from_json(json: *const c_char, out: *mut *mut StgScenario) -> StgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let s = Scenario::from_json(text).map_err(|e| Failure(StgStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(StgScenario(s)));
        Ok(())
    })
}

/// Number of bundled case-study scenarios.
#[no_mangle]
pub extern "C" fn stg_bundled_count() -> usize {
    replay::BUNDLED.len()
}

/// Load bundled scenario `index` (0-based, in row order).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stg_scenario_bundled(index: usize, out: *mut *mut StgScenario) -> StgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, json) = replay::BUNDLED
            .get(index)
            .ok_or_else(|| Failure(StgStatus::InvalidInput, format!("no bundled scenario {index}")))?;
        let s = Scenario::from_json(json).map_err(|e| Failure(StgStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(StgScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn stg_scenario_free(s: *mut StgScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Replay a scenario with its scripted planner and oracle guards; writes
/// the task report as JSON.
///
/// # Safety
/// `scenario` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stg_replay(
    scenario: *const StgScenario,
    config: StgConfig,
    out_json: *mut *mut c_char,
) -> StgStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let cfg = match config {
            StgConfig::Baseline => ReplayConfig::Baseline,
            StgConfig::Fea => ReplayConfig::Fea,
            StgConfig::FeaCom => ReplayConfig::FeaCom,
        };
        let report = replay::replay(&s.0, cfg).map_err(|e| {
            let status = match e {
                stepguard::coordinator::RunError::PrivacyViolation(_) => StgStatus::PrivacyViolation,
                stepguard::coordinator::RunError::ScenarioAuthoring(_) => StgStatus::InvalidInput,
            };
            Failure(status, e.to_string())
        })?;
        *out_json = to_c(serde_json::to_string(&report).expect("report serialization"))?;
        Ok(())
    })
}

/// Fresh memory that lives only in this process.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stg_memory_new(out: *mut *mut StgMemory) -> StgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(StgMemory(PlaceholderMemory::in_memory())));
        Ok(())
    })
}

/// Memory backed by a file, created on first write.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stg_memory_open(path: *const c_char, out: *mut *mut StgMemory) -> StgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = str_arg(path, "path")?;
        let m = PlaceholderMemory::open(p).map_err(privacy_failure)?;
        *out = Box::into_raw(Box::new(StgMemory(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn stg_memory_free(m: *mut StgMemory) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Replace sensitive spans with placeholders, recording values in memory.
/// `suffix_on_collision` nonzero renames clashing names instead of failing.
///
/// # Safety
/// `memory` must be a live handle not used concurrently from another
/// thread; `instruction` nul-terminated; `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn stg_redact(
    memory: *mut StgMemory,
    instruction: *const c_char,
    suffix_on_collision: u8,
    out_text: *mut *mut c_char,
) -> StgStatus {
    guard(|| {
        let m = memory.as_mut().ok_or_else(|| null("memory"))?;
        if out_text.is_null() {
            return Err(null("out_text"));
        }
        let text = str_arg(instruction, "instruction")?;
        let policy = if suffix_on_collision != 0 { CollisionPolicy::Suffix } else { CollisionPolicy::Error };
        let r = privacy::redact(text, &RuleDetector, &mut m.0, policy).map_err(privacy_failure)?;
        *out_text = to_c(r.text)?;
        Ok(())
    })
}

/// Substitute known placeholders back into a command. Unknown ones are
/// left in place and counted in `out_unknown` when non-null.
///
/// # Safety
/// `memory` must be a live handle; `command` nul-terminated; `out_text`
/// writable; `out_unknown` null or writable.
#[no_mangle]
pub unsafe extern "C" fn stg_restore(
    memory: *const StgMemory,
    command: *const c_char,
    out_text: *mut *mut c_char,
    out_unknown: *mut usize,
) -> StgStatus {
    guard(|| {
        let m = memory.as_ref().ok_or_else(|| null("memory"))?;
        if out_text.is_null() {
            return Err(null("out_text"));
        }
        let r = privacy::restore(str_arg(command, "command")?, &m.0);
        if !out_unknown.is_null() {
            *out_unknown = r.unknown.len();
        }
        *out_text = to_c(r.text)?;
        Ok(())
    })
}

/// Decode a structured model reply.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stg_codec_parse(bytes: *const u8, len: usize, out: *mut StgStructuredResult) -> StgStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let slice = std::slice::from_raw_parts(bytes, len);
        let r = codec::parse_bytes(slice).map_err(|e| Failure(StgStatus::InvalidInput, e.to_string()))?;
        *out = match r {
            StructuredResult::Feasibility(b) => {
                StgStructuredResult { kind: StgResultKind::Feasibility, bit: b.is_one() as u8, bbox: [0; 4] }
            }
            StructuredResult::Completeness(b) => {
                StgStructuredResult { kind: StgResultKind::Completeness, bit: b.is_one() as u8, bbox: [0; 4] }
            }
            StructuredResult::Locate(b) => {
                StgStructuredResult { kind: StgResultKind::Locate, bit: 0, bbox: [b.x_min, b.y_min, b.x_max, b.y_max] }
            }
        };
        Ok(())
    })
}

/// Accuracy, average precision and F1 over `n` (score, label) pairs.
///
/// # Safety
/// `scores` and `labels` must each point to `n` readable elements; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn stg_compute_metrics(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut StgMetrics,
) -> StgStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return Err(null("scores, labels or out"));
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l = std::slice::from_raw_parts(labels, n);
        let pairs: Vec<(f64, bool)> = s.iter().zip(l).map(|(&s, &l)| (s, l != 0)).collect();
        let m = eval::compute_metrics(&pairs).map_err(|e| Failure(StgStatus::InvalidInput, e.to_string()))?;
        *out = StgMetrics {
            accuracy: m.accuracy,
            average_precision: m.average_precision.unwrap_or(f64::NAN),
            f1: m.f1.unwrap_or(f64::NAN),
            has_positive: m.f1.is_some() as u8,
        };
        Ok(())
    })
}

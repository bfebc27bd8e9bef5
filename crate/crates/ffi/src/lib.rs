//! C interface to the abcsmc engine.
//!
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! `AbcStatus`; on failure `abc_last_error_message` describes the most
//! recent error on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use abcsmc::diagnostics::{wasserstein, WassersteinOrder};
use abcsmc::harness::{execute_on, parse_experiment, HarnessError, RunRecord, RunSpec, RunStatus};
use abcsmc::model::{builtin_target, ObservedTarget};
use abcsmc::smc::systematic_resample;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Model = 4,
    NoCompleteIteration = 5,
    RunFailed = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// An observed target: model plus observed data.
pub struct AbcTarget(ObservedTarget);

/// Settings of a single run.
pub struct AbcConfig(RunSpec);

/// A completed run.
pub struct AbcRun(RunRecord);

/// One row of the iteration trace.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AbcTraceRow {
    pub t: usize,
    pub epsilon: f64,
    pub wall_clock_s: f64,
    pub n_simulations: u64,
    pub accept_rate: f64,
    pub unique_after_resample: usize,
    pub proposal_fit_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: AbcStatus, msg: impl Into<String>) -> AbcStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> AbcStatus) -> AbcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(AbcStatus::Panic, msg)
        }
    }
}

fn harness_status(e: &HarnessError) -> AbcStatus {
    match e {
        HarnessError::Config(_) | HarnessError::Unsupported(_) => AbcStatus::Config,
        HarnessError::Model(_) => AbcStatus::Model,
        _ => AbcStatus::RunFailed,
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, AbcStatus> {
    if s.is_null() {
        return Err(fail(AbcStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(AbcStatus::InvalidArgument, "string is not UTF-8"))
}

/// Copies `text` plus a NUL into `buf`; `needed` receives the full size.
/// A short buffer leaves the last error untouched.
unsafe fn write_text(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> AbcStatus {
    let bytes = text.as_bytes();
    if !needed.is_null() {
        *needed = bytes.len() + 1;
    }
    if buf.is_null() || len < bytes.len() + 1 {
        return AbcStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    AbcStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null; `needed` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn abc_last_error_message(buf: *mut c_char, len: usize, needed: *mut usize) -> AbcStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    write_text(&msg, buf, len, needed)
}

/// Creates a shipped model with its built-in observed data
/// (`quadratic`, `gm`, `mg1`, `seir`, `slcp`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn abc_target_builtin(name: *const c_char, out: *mut *mut AbcTarget) -> AbcStatus {
    guard(|| {
        if out.is_null() {
            return fail(AbcStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let name = match read_str(name) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match builtin_target(name) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(AbcTarget(t)));
                AbcStatus::Ok
            }
            Err(e) => fail(AbcStatus::Model, e.to_string()),
        }
    })
}

/// Parameter dimension of a target; 0 for a null handle.
///
/// # Safety
/// `t` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn abc_target_dim_theta(t: *const AbcTarget) -> usize {
    t.as_ref().map_or(0, |t| t.0.model.dim_theta())
}

/// # Safety
/// `t` must come from `abc_target_builtin` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn abc_target_free(t: *mut AbcTarget) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Parses a configuration with a `[run]` table and no grid.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn abc_config_from_toml(text: *const c_char, out: *mut *mut AbcConfig) -> AbcStatus {
    guard(|| {
        if out.is_null() {
            return fail(AbcStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match parse_experiment(text) {
            Ok(f) if f.runs.len() == 1 => {
                *out = Box::into_raw(Box::new(AbcConfig(f.runs.into_iter().next().expect("one run"))));
                AbcStatus::Ok
            }
            Ok(f) => fail(AbcStatus::Config, format!("expected one run, the file expands to {}", f.runs.len())),
            Err(e) => fail(harness_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `c` must come from `abc_config_from_toml` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn abc_config_free(c: *mut AbcConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Runs the configured sampler on `target`. `workers = 0` uses all cores.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn abc_run(
    target: *const AbcTarget,
    config: *const AbcConfig,
    workers: usize,
    allow_inefficient: bool,
    out: *mut *mut AbcRun,
) -> AbcStatus {
    guard(|| {
        if out.is_null() {
            return fail(AbcStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let (Some(target), Some(config)) = (target.as_ref(), config.as_ref()) else {
            return fail(AbcStatus::NullPointer, "target or config is null");
        };
        if target.0.model.name() != config.0.model {
            return fail(
                AbcStatus::InvalidArgument,
                format!("config names model {:?} but the target is {:?}", config.0.model, target.0.model.name()),
            );
        }
        if let Some(reason) = config.0.incompatibility(allow_inefficient) {
            return fail(AbcStatus::Config, reason);
        }
        match execute_on(&config.0, &target.0, workers) {
            Ok(rec) => match &rec.status {
                RunStatus::Completed => {
                    *out = Box::into_raw(Box::new(AbcRun(rec)));
                    AbcStatus::Ok
                }
                RunStatus::NoCompleteIteration => {
                    fail(AbcStatus::NoCompleteIteration, "budget exhausted before the first iteration completed")
                }
                RunStatus::Failed(m) => fail(AbcStatus::RunFailed, m.clone()),
            },
            Err(e) => fail(harness_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `r` must come from `abc_run` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn abc_run_free(r: *mut AbcRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of completed iterations; 0 for a null handle.
///
/// # Safety
/// `r` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn abc_run_iterations(r: *const AbcRun) -> usize {
    r.as_ref().map_or(0, |r| r.0.traces.len())
}

/// # Safety
/// `r` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn abc_run_final_epsilon(r: *const AbcRun, out: *mut f64) -> AbcStatus {
    let (Some(r), false) = (r.as_ref(), out.is_null()) else {
        return fail(AbcStatus::NullPointer, "run or out is null");
    };
    match r.0.final_epsilon() {
        Some(e) => {
            *out = e;
            AbcStatus::Ok
        }
        None => fail(AbcStatus::NoCompleteIteration, "run has no iterations"),
    }
}

/// Rows and columns of the output sample.
///
/// # Safety
/// `r` must be a live handle; `rows` and `cols` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn abc_run_sample_shape(r: *const AbcRun, rows: *mut usize, cols: *mut usize) -> AbcStatus {
    let Some(r) = r.as_ref() else {
        return fail(AbcStatus::NullPointer, "run is null");
    };
    if rows.is_null() || cols.is_null() {
        return fail(AbcStatus::NullPointer, "rows or cols is null");
    }
    *rows = r.0.output.len();
    *cols = r.0.output.first().map_or(0, Vec::len);
    AbcStatus::Ok
}

/// Copies the output sample row-major into `buf` (`len` doubles).
///
/// # Safety
/// `r` must be a live handle; `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abc_run_copy_sample(r: *const AbcRun, buf: *mut f64, len: usize) -> AbcStatus {
    let Some(r) = r.as_ref() else {
        return fail(AbcStatus::NullPointer, "run is null");
    };
    let total: usize = r.0.output.iter().map(Vec::len).sum();
    if buf.is_null() || len < total {
        return fail(AbcStatus::BufferTooSmall, format!("need {total} doubles"));
    }
    for (k, v) in r.0.output.iter().flatten().enumerate() {
        *buf.add(k) = *v;
    }
    AbcStatus::Ok
}

/// Trace row `index` (0-based).
///
/// # Safety
/// `r` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn abc_run_trace(r: *const AbcRun, index: usize, out: *mut AbcTraceRow) -> AbcStatus {
    let (Some(r), false) = (r.as_ref(), out.is_null()) else {
        return fail(AbcStatus::NullPointer, "run or out is null");
    };
    let Some(t) = r.0.traces.get(index) else {
        return fail(AbcStatus::InvalidArgument, format!("trace index {index} out of range"));
    };
    *out = AbcTraceRow {
        t: t.t,
        epsilon: t.epsilon,
        wall_clock_s: t.wall_clock_s,
        n_simulations: t.n_simulations,
        accept_rate: t.accept_rate,
        unique_after_resample: t.unique_after_resample,
        proposal_fit_s: t.proposal_fit_s,
    };
    AbcStatus::Ok
}

/// The run record as JSON. Call with a null `buf` to learn the size.
///
/// # Safety
/// `r` must be a live handle; `buf` valid for `len` bytes or null;
/// `needed` valid or null.
#[no_mangle]
pub unsafe extern "C" fn abc_run_record_json(
    r: *const AbcRun,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> AbcStatus {
    guard(|| {
        let Some(r) = r.as_ref() else {
            return fail(AbcStatus::NullPointer, "run is null");
        };
        match r.0.to_json() {
            Ok(s) => write_text(&s, buf, len, needed),
            Err(e) => fail(AbcStatus::RunFailed, e.to_string()),
        }
    })
}

/// Exact Wasserstein distance of order `order` (1 or 2) between two
/// row-major samples of `n` and `m` points in `d` dimensions.
///
/// # Safety
/// `a` must hold `n * d` doubles, `b` `m * d`; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn abc_wasserstein(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    d: usize,
    order: u32,
    out: *mut f64,
) -> AbcStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(AbcStatus::NullPointer, "null argument");
        }
        if n == 0 || m == 0 || d == 0 {
            return fail(AbcStatus::InvalidArgument, "empty sample");
        }
        let order = match order {
            1 => WassersteinOrder::One,
            2 => WassersteinOrder::Two,
            o => return fail(AbcStatus::InvalidArgument, format!("order {o} is not 1 or 2")),
        };
        let rows = |p: *const f64, k: usize| -> Vec<Vec<f64>> {
            std::slice::from_raw_parts(p, k * d).chunks(d).map(<[f64]>::to_vec).collect()
        };
        match wasserstein(&rows(a, n), &rows(b, m), order) {
            Ok(w) => {
                *out = w;
                AbcStatus::Ok
            }
            Err(e) => fail(AbcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Systematic resampling of `n_weights` weights into `n` sorted indices.
///
/// # Safety
/// `weights` must hold `n_weights` doubles; `out` must hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn abc_systematic_resample(
    weights: *const f64,
    n_weights: usize,
    n: usize,
    u: f64,
    out: *mut usize,
) -> AbcStatus {
    guard(|| {
        if weights.is_null() || out.is_null() {
            return fail(AbcStatus::NullPointer, "null argument");
        }
        if n_weights == 0 || !(0.0..1.0).contains(&u) {
            return fail(AbcStatus::InvalidArgument, "need at least one weight and u in [0, 1)");
        }
        let w = std::slice::from_raw_parts(weights, n_weights);
        match systematic_resample(w, n, u) {
            Ok(idx) => {
                ptr::copy_nonoverlapping(idx.as_ptr(), out, n);
                AbcStatus::Ok
            }
            Err(e) => fail(AbcStatus::InvalidArgument, e.to_string()),
        }
    })
}

//! C ABI over the toolkit. Every entry point returns an [`MtfStatus`],
//! catches panics at the boundary, and records a per-thread failure message
//! retrievable with `mtf_last_error`. The function surface is declared in
//! `include/mtl_forge.h`, kept in lock-step by a test.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mtl_forge::arch::{load_model, save_model, Model, TaskBatch};
use mtl_forge::{stats, Error};

/// Mirror of the `MtfStatus` enum in the header; the first four values
/// match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtfStatus {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
    NullArg = 4,
    Utf8 = 5,
    Panic = 6,
}

/// Opaque to C; only ever handed out as a pointer.
pub struct MtfModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    let c = CString::new(sanitized).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: &Error) -> MtfStatus {
    set_error(&e.to_string());
    match e.exit_code() {
        1 => MtfStatus::Usage,
        2 => MtfStatus::Data,
        _ => MtfStatus::Numeric,
    }
}

/// Runs the body with a panic guard so unwinding never crosses the ABI.
fn guarded(f: impl FnOnce() -> MtfStatus) -> MtfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic caught at the C boundary");
            MtfStatus::Panic
        }
    }
}

macro_rules! require_non_null {
    ($($p:ident),+ $(,)?) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer argument: ", stringify!($p)));
            return MtfStatus::NullArg;
        })+
    };
}

/// # Safety
/// `ptr` must point to `len` readable values when `len > 0`.
unsafe fn values<'a, T>(ptr: *const T, len: usize) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(ptr, len)
    }
}

#[no_mangle]
pub extern "C" fn mtf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn mtf_rmse(
    pred: *const f64,
    actual: *const f64,
    len: usize,
    out: *mut f64,
) -> MtfStatus {
    require_non_null!(pred, actual, out);
    guarded(|| {
        let (pred, actual) = unsafe { (values(pred, len), values(actual, len)) };
        match stats::rmse(pred, actual) {
            Ok(v) => {
                unsafe { *out = v };
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_skill_score(
    model_rmse: *const f64,
    baseline_rmse: *const f64,
    len: usize,
    out: *mut f64,
) -> MtfStatus {
    require_non_null!(model_rmse, baseline_rmse, out);
    guarded(|| {
        let (m, b) = unsafe { (values(model_rmse, len), values(baseline_rmse, len)) };
        match stats::skill_score(m, b) {
            Ok(v) => {
                unsafe { *out = v };
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_pearson(
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> MtfStatus {
    require_non_null!(x, y, out);
    guarded(|| {
        let (x, y) = unsafe { (values(x, len), values(y, len)) };
        match stats::pearson(x, y) {
            Ok(v) => {
                unsafe { *out = v };
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_wilcoxon(
    a: *const f64,
    b: *const f64,
    len: usize,
    statistic: *mut f64,
    p_value: *mut f64,
) -> MtfStatus {
    require_non_null!(a, b, statistic, p_value);
    guarded(|| {
        let (a, b) = unsafe { (values(a, len), values(b, len)) };
        match stats::wilcoxon_signed_rank(a, b) {
            Ok(r) => {
                unsafe {
                    *statistic = r.statistic;
                    *p_value = r.p_value;
                }
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_shapiro_wilk(
    sample: *const f64,
    len: usize,
    w: *mut f64,
    p_value: *mut f64,
) -> MtfStatus {
    require_non_null!(sample, w, p_value);
    guarded(|| {
        let sample = unsafe { values(sample, len) };
        match stats::shapiro_wilk(sample) {
            Ok((stat, p)) => {
                unsafe {
                    *w = stat;
                    *p_value = p;
                }
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_paired_t_test(
    a: *const f64,
    b: *const f64,
    len: usize,
    t: *mut f64,
    p_value: *mut f64,
) -> MtfStatus {
    require_non_null!(a, b, t, p_value);
    guarded(|| {
        let (a, b) = unsafe { (values(a, len), values(b, len)) };
        match stats::paired_t_test(a, b) {
            Ok(r) => {
                unsafe {
                    *t = r.t;
                    *p_value = r.p_value;
                }
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_model_load(path: *const c_char, out: *mut *mut MtfModel) -> MtfStatus {
    require_non_null!(path, out);
    guarded(|| {
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return MtfStatus::Utf8;
            }
        };
        match load_model(Path::new(path)) {
            Ok(model) => {
                let handle = Box::new(MtfModel { inner: model });
                unsafe { *out = Box::into_raw(handle) };
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_model_save(model: *const MtfModel, path: *const c_char) -> MtfStatus {
    require_non_null!(model, path);
    guarded(|| {
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return MtfStatus::Utf8;
            }
        };
        let model = unsafe { &(*model).inner };
        match save_model(Path::new(path), model) {
            Ok(()) => MtfStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn mtf_model_parameter_count(
    model: *const MtfModel,
    out: *mut usize,
) -> MtfStatus {
    require_non_null!(model, out);
    guarded(|| {
        unsafe { *out = (*model).inner.parameter_count() };
        MtfStatus::Ok
    })
}

#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub extern "C" fn mtf_model_predict(
    model: *mut MtfModel,
    features: *const f64,
    task_ids: *const usize,
    hours: *const u32,
    weeks: *const u32,
    days: *const u32,
    n_rows: usize,
    n_features: usize,
    out: *mut f64,
) -> MtfStatus {
    require_non_null!(model, features, task_ids, hours, weeks, days, out);
    guarded(|| {
        let model = unsafe { &mut (*model).inner };
        if n_rows == 0 {
            set_error("prediction needs at least one row");
            return MtfStatus::Usage;
        }
        if n_features != model.config.n_features {
            set_error(&format!(
                "model expects {} features per row, got {n_features}",
                model.config.n_features
            ));
            return MtfStatus::Usage;
        }
        let features = unsafe { values(features, n_rows * n_features) };
        let task_ids = unsafe { values(task_ids, n_rows) };
        let hours = unsafe { values(hours, n_rows) };
        let weeks = unsafe { values(weeks, n_rows) };
        let days = unsafe { values(days, n_rows) };
        for (what, ids, lo, hi) in
            [("hour", hours, 0u32, 23u32), ("week", weeks, 1, 53), ("day", days, 1, 31)]
        {
            if let Some(bad) = ids.iter().find(|&&v| v < lo || v > hi) {
                set_error(&format!("{what} {bad} outside {lo}..={hi}"));
                return MtfStatus::Data;
            }
        }

        let batches = match build_batches(model, features, task_ids, hours, weeks, days, n_features)
        {
            Ok(b) => b,
            Err(e) => return fail(&e),
        };
        match model.predict_batches(&batches) {
            Ok(preds) => {
                let flat: Vec<f64> = preds.into_iter().flatten().collect();
                debug_assert_eq!(flat.len(), n_rows);
                unsafe {
                    std::ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
                }
                MtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `model` must come from `mtf_model_load` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn mtf_model_free(model: *mut MtfModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Splits task-grouped rows into per-task batches for tower/head models, or
/// wraps everything into a single batch for single-network families.
fn build_batches(
    model: &Model,
    features: &[f64],
    task_ids: &[usize],
    hours: &[u32],
    weeks: &[u32],
    days: &[u32],
    d: usize,
) -> Result<Vec<TaskBatch>, Error> {
    let n_rows = task_ids.len();
    let make = |lo: usize, hi: usize| TaskBatch {
        rows: hi - lo,
        features: features[lo * d..hi * d].to_vec(),
        task_ids: task_ids[lo..hi].to_vec(),
        hours: hours[lo..hi].iter().map(|&v| v as usize).collect(),
        weeks: weeks[lo..hi].iter().map(|&v| v as usize - 1).collect(),
        days: days[lo..hi].iter().map(|&v| v as usize - 1).collect(),
        targets: Vec::new(),
    };
    if !model.config.kind.is_multitask() {
        return Ok(vec![make(0, n_rows)]);
    }
    let mut batches = Vec::with_capacity(model.config.n_tasks);
    let mut lo = 0;
    while lo < n_rows {
        let task = task_ids[lo];
        let mut hi = lo + 1;
        while hi < n_rows && task_ids[hi] == task {
            hi += 1;
        }
        if task != batches.len() {
            return Err(Error::usage(format!(
                "multi-task predictions need rows grouped by task in order; found task {task} where task {} starts",
                batches.len()
            )));
        }
        batches.push(make(lo, hi));
        lo = hi;
    }
    Ok(batches)
}

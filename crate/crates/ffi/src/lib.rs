//! C interface to the darc library.
//!
//! Every fallible function returns a `DarcStatus`. On failure, a message
//! describing the error can be read with `darc_last_error` until the next
//! failing call on the same thread. Objects are passed around as opaque
//! handles and released with the matching `_free` function; results are
//! written through out-pointers only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use darc::calibration::build_calibrated_set;
use darc::head::{load_params, save_params};
use darc::{
    CalibratedSet, CalibrationConfig, EmbeddingDataset, Error, HeadParams, TrainConfig, View,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DarcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Bad magic, version or header field in a file.
    Format = 3,
    /// File shorter or longer than its header declares.
    Length = 4,
    Validation = 5,
    Config = 6,
    Io = 7,
    Json = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

pub struct DarcDataset(EmbeddingDataset);

pub struct DarcParams(HeadParams);

pub struct DarcCalibratedSet(CalibratedSet);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DarcCalibrationConfig {
    pub eta: usize,
    pub k: usize,
    pub n_rare: usize,
    pub n_com: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DarcTrainConfig {
    pub n_max: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub n_mine: usize,
    pub delta: f64,
    pub n_hard: usize,
    /// Attention hidden width; 0 selects `dim / 2`.
    pub hidden: usize,
    pub seed: u64,
}

impl From<DarcCalibrationConfig> for CalibrationConfig {
    fn from(c: DarcCalibrationConfig) -> Self {
        CalibrationConfig {
            eta: c.eta,
            k: c.k,
            n_rare: c.n_rare,
            n_com: c.n_com,
            seed: c.seed,
        }
    }
}

impl From<DarcTrainConfig> for TrainConfig {
    fn from(c: DarcTrainConfig) -> Self {
        TrainConfig {
            n_max: c.n_max,
            lr_max: c.lr_max,
            lr_min: c.lr_min,
            batch_size: c.batch_size,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
            n_mine: c.n_mine,
            delta: c.delta,
            n_hard: c.n_hard,
            hidden: (c.hidden > 0).then_some(c.hidden),
            seed: c.seed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DarcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Format(_) => DarcStatus::Format,
            Error::Length { .. } => DarcStatus::Length,
            Error::Validation(_) => DarcStatus::Validation,
            Error::Config(_) => DarcStatus::Config,
            Error::Io { .. } => DarcStatus::Io,
            Error::Json(_) => DarcStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DarcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DarcStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DarcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DarcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            DarcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn darc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL if there was none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn darc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a dataset from `n` rows of `dim` floats (row-major), `n` labels and
/// `n_classes` class names. `view` is 0 for plain, 1 for augmented.
///
/// # Safety
/// Every pointer must be valid for the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_new(
    dim: usize,
    n: usize,
    values: *const f32,
    labels: *const u32,
    n_classes: usize,
    class_names: *const *const c_char,
    view: u8,
    out: *mut *mut DarcDataset,
) -> DarcStatus {
    guard(|| {
        if n > 0 && (values.is_null() || labels.is_null()) {
            return Err(null("values or labels"));
        }
        if n_classes > 0 && class_names.is_null() {
            return Err(null("class_names"));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| invalid("n * dim overflows"))?;
        let values = if n == 0 {
            Vec::new()
        } else {
            slice::from_raw_parts(values, len).to_vec()
        };
        let labels = if n == 0 {
            Vec::new()
        } else {
            slice::from_raw_parts(labels, n).to_vec()
        };
        let names = if n_classes == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(class_names, n_classes)
        };
        let names = names
            .iter()
            .map(|&p| {
                if p.is_null() {
                    return Err(null("class name"));
                }
                CStr::from_ptr(p)
                    .to_str()
                    .map(str::to_string)
                    .map_err(|_| invalid("class name is not valid UTF-8"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let view = View::from_byte(view).ok_or_else(|| invalid(format!("unknown view {view}")))?;
        let ds = EmbeddingDataset::new(dim, values, labels, names, view)?;
        write_out(out, DarcDataset(ds))
    })
}

/// Loads a DARC1 file (and its metadata sidecar if present).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_load(
    path: *const c_char,
    out: *mut *mut DarcDataset,
) -> DarcStatus {
    guard(|| {
        let ds = darc::load_dataset(path_arg(path)?)?;
        write_out(out, DarcDataset(ds))
    })
}

/// # Safety
/// `ds` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_save(
    ds: *const DarcDataset,
    path: *const c_char,
) -> DarcStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        darc::save_dataset(&ds.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of rows; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_len(ds: *const DarcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_dim(ds: *const DarcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_n_classes(ds: *const DarcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_classes())
}

/// Copies the labels into `labels`, which must hold `darc_dataset_len` entries.
///
/// # Safety
/// `labels` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_labels(
    ds: *const DarcDataset,
    labels: *mut u32,
    capacity: usize,
) -> DarcStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if labels.is_null() {
            return Err(null("labels"));
        }
        if capacity < ds.0.len() {
            return Err(invalid(format!(
                "capacity {capacity} < {} rows",
                ds.0.len()
            )));
        }
        slice::from_raw_parts_mut(labels, ds.0.len()).copy_from_slice(ds.0.labels());
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn darc_dataset_free(ds: *mut DarcDataset) {
    free_handle(ds)
}

#[no_mangle]
pub extern "C" fn darc_calibration_config_default() -> DarcCalibrationConfig {
    let c = CalibrationConfig::default();
    DarcCalibrationConfig {
        eta: c.eta,
        k: c.k,
        n_rare: c.n_rare,
        n_com: c.n_com,
        seed: c.seed,
    }
}

/// Builds the calibrated training set from the plain and augmented views.
///
/// # Safety
/// Handles must be live; `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn darc_calibrate(
    plain: *const DarcDataset,
    aug: *const DarcDataset,
    config: *const DarcCalibrationConfig,
    out: *mut *mut DarcCalibratedSet,
) -> DarcStatus {
    guard(|| {
        let plain = deref(plain, "plain dataset")?;
        let aug = deref(aug, "augmented dataset")?;
        let config = CalibrationConfig::from(*deref(config, "config")?);
        let set = build_calibrated_set(&plain.0, &aug.0, &config)?;
        write_out(out, DarcCalibratedSet(set))
    })
}

/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn darc_calibrated_len(set: *const DarcCalibratedSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Copies the calibrated rows into a new dataset handle.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn darc_calibrated_dataset(
    set: *const DarcCalibratedSet,
    out: *mut *mut DarcDataset,
) -> DarcStatus {
    guard(|| {
        let set = deref(set, "calibrated set")?;
        write_out(out, DarcDataset(set.0.data.clone()))
    })
}

/// Writes the per-row provenance CSV.
///
/// # Safety
/// `set` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn darc_calibrated_write_provenance(
    set: *const DarcCalibratedSet,
    path: *const c_char,
) -> DarcStatus {
    guard(|| {
        let set = deref(set, "calibrated set")?;
        set.0.write_provenance_csv(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn darc_calibrated_free(set: *mut DarcCalibratedSet) {
    free_handle(set)
}

#[no_mangle]
pub extern "C" fn darc_train_config_default() -> DarcTrainConfig {
    let c = TrainConfig::default();
    DarcTrainConfig {
        n_max: c.n_max,
        lr_max: c.lr_max,
        lr_min: c.lr_min,
        batch_size: c.batch_size,
        beta1: c.beta1,
        beta2: c.beta2,
        eps: c.eps,
        weight_decay: c.weight_decay,
        n_mine: c.n_mine,
        delta: c.delta,
        n_hard: c.n_hard,
        hidden: c.hidden.unwrap_or(0),
        seed: c.seed,
    }
}

/// Trains a head on `ds`.
///
/// # Safety
/// `ds` must be a live handle; `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn darc_train(
    ds: *const DarcDataset,
    config: *const DarcTrainConfig,
    out: *mut *mut DarcParams,
) -> DarcStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let config = TrainConfig::from(*deref(config, "config")?);
        let trained = darc::train(&ds.0, &config)?;
        write_out(out, DarcParams(trained.params))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn darc_params_load(
    path: *const c_char,
    out: *mut *mut DarcParams,
) -> DarcStatus {
    guard(|| {
        let p = load_params(path_arg(path)?)?;
        write_out(out, DarcParams(p))
    })
}

/// # Safety
/// `params` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn darc_params_save(
    params: *const DarcParams,
    path: *const c_char,
) -> DarcStatus {
    guard(|| {
        let p = deref(params, "params")?;
        save_params(&p.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `params` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn darc_params_free(params: *mut DarcParams) {
    free_handle(params)
}

/// Predicted class per row of `ds`, written to `preds` (at least
/// `darc_dataset_len(ds)` entries).
///
/// # Safety
/// Handles must be live; `preds` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn darc_predict(
    params: *const DarcParams,
    ds: *const DarcDataset,
    preds: *mut u32,
    capacity: usize,
) -> DarcStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let ds = deref(ds, "dataset")?;
        if preds.is_null() {
            return Err(null("preds"));
        }
        if capacity < ds.0.len() {
            return Err(invalid(format!(
                "capacity {capacity} < {} rows",
                ds.0.len()
            )));
        }
        let got = darc::predict(&p.0, &ds.0)?;
        for (dst, c) in slice::from_raw_parts_mut(preds, got.len())
            .iter_mut()
            .zip(got)
        {
            *dst = c as u32;
        }
        Ok(())
    })
}

/// Mean per-class recall over the classes present in `labels`.
///
/// # Safety
/// `preds` and `labels` must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn darc_balanced_accuracy(
    preds: *const u32,
    labels: *const u32,
    n: usize,
    n_classes: usize,
    out: *mut f64,
) -> DarcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        if n > 0 && (preds.is_null() || labels.is_null()) {
            return Err(null("preds or labels"));
        }
        let widen = |p: *const u32| -> Vec<usize> {
            if n == 0 {
                Vec::new()
            } else {
                slice::from_raw_parts(p, n)
                    .iter()
                    .map(|&v| v as usize)
                    .collect()
            }
        };
        *out = darc::balanced_accuracy(&widen(preds), &widen(labels), n_classes)?;
        Ok(())
    })
}

/// Evaluation report for `ds` as a JSON string, to be released with
/// `darc_string_free`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn darc_evaluate_json(
    params: *const DarcParams,
    ds: *const DarcDataset,
    out: *mut *mut c_char,
) -> DarcStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let ds = deref(ds, "dataset")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let json = darc::evaluate(&p.0, &ds.0, None)?.to_json()?;
        *out = CString::new(json)
            .map_err(|_| invalid("report contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn darc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

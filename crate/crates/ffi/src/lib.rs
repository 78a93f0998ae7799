//! C ABI over splitglm. Every entry point returns an `SgStatus`; on failure
//! `sg_last_error` holds a message for the calling thread.
//!
//! Handles are opaque and owned by the caller once returned. Free them with
//! the matching `*_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use splitglm::data::{partition_features, Dataset};
use splitglm::driver::gather_weights;
use splitglm::runtime::{spawn_spmd_with, SpmdOptions};
use splitglm::{fit, Error, LossKind, SolveMode, SolverConfig, Transport};

pub const SG_LOSS_SQUARED: i32 = 0;
pub const SG_LOSS_LOGISTIC: i32 = 1;
pub const SG_LOSS_PROBIT: i32 = 2;

pub const SG_MODE_BSP: i32 = 0;
pub const SG_MODE_ALB: i32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    InvalidArgument = 1,
    Parse = 2,
    Format = 3,
    Io = 4,
    Transport = 5,
    Protocol = 6,
    Join = 7,
    LineSearch = 8,
    Oracle = 9,
    UndefinedMetric = 10,
    Panic = 11,
}

/// Training options. Start from `sg_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgConfig {
    /// One of the `SG_LOSS_*` constants.
    pub loss: i32,
    pub lambda1: f64,
    pub lambda2: f64,
    pub nu: f64,
    /// One of the `SG_MODE_*` constants.
    pub mode: i32,
    pub kappa: f64,
    /// Nonzero enables adaptive `mu`.
    pub mu_adaptive: i32,
    pub max_outer: usize,
    pub tol: f64,
    /// In-process workers.
    pub nodes: usize,
    pub seed: u64,
}

pub struct SgDataset {
    inner: Dataset,
}

pub struct SgModel {
    weights: Vec<f64>,
    raw_ids: Vec<u64>,
    index: BTreeMap<u64, usize>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SgStatus {
    match err {
        Error::InvalidArgument(_) => SgStatus::InvalidArgument,
        Error::Parse { .. } => SgStatus::Parse,
        Error::Format { .. } => SgStatus::Format,
        Error::Io(_) => SgStatus::Io,
        Error::Transport(_) => SgStatus::Transport,
        Error::Protocol(_) => SgStatus::Protocol,
        Error::Join { .. } => SgStatus::Join,
        Error::LineSearch { .. } => SgStatus::LineSearch,
        Error::Oracle(_) => SgStatus::Oracle,
        Error::UndefinedMetric(_) => SgStatus::UndefinedMetric,
    }
}

fn guard(body: impl FnOnce() -> Result<(), Error>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SgStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn null(name: &str) -> Error {
    invalid(format!("{name} is null"))
}

unsafe fn reference<'a, T>(p: *const T, name: &str) -> Result<&'a T, Error> {
    p.as_ref().ok_or_else(|| null(name))
}

/// `len` elements at `p`; a null pointer is accepted only when `len` is 0.
unsafe fn array<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Error> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn array_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Error> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn emit<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), Error> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn solver_config(c: &SgConfig) -> Result<SolverConfig, Error> {
    let loss = match c.loss {
        SG_LOSS_SQUARED => LossKind::Squared,
        SG_LOSS_LOGISTIC => LossKind::Logistic,
        SG_LOSS_PROBIT => LossKind::Probit,
        other => return Err(invalid(format!("unknown loss {other}"))),
    };
    let mut cfg = SolverConfig::new(loss, c.lambda1, c.lambda2);
    cfg.mode = match c.mode {
        SG_MODE_BSP => SolveMode::Bsp,
        SG_MODE_ALB => SolveMode::Alb,
        other => return Err(invalid(format!("unknown mode {other}"))),
    };
    cfg.nu = c.nu;
    cfg.kappa = c.kappa;
    cfg.mu_adaptive = c.mu_adaptive != 0;
    cfg.max_outer = c.max_outer;
    cfg.tol = c.tol;
    cfg.validate()?;
    Ok(cfg)
}

/// Defaults for `loss` (an `SG_LOSS_*` value) with the given penalties.
#[no_mangle]
pub extern "C" fn sg_config_default(loss: i32, lambda1: f64, lambda2: f64) -> SgConfig {
    let d = SolverConfig::new(LossKind::Squared, lambda1, lambda2);
    SgConfig {
        loss,
        lambda1,
        lambda2,
        nu: d.nu,
        mode: SG_MODE_BSP,
        kappa: d.kappa,
        mu_adaptive: i32::from(d.mu_adaptive),
        max_outer: d.max_outer,
        tol: d.tol,
        nodes: 1,
        seed: 0,
    }
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a LIBSVM file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_read_libsvm(path: *const c_char, out: *mut *mut SgDataset) -> SgStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let inner = Dataset::read(Path::new(path))?;
        emit(out, SgDataset { inner }, "out")
    })
}

/// Builds a dataset from CSR arrays with 0-based column indices.
/// `row_ptr` has `n + 1` entries; `col_idx` and `values` have `row_ptr[n]`.
///
/// # Safety
/// All arrays must hold the lengths above; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_from_csr(
    n: usize,
    p: usize,
    labels: *const f64,
    row_ptr: *const usize,
    col_idx: *const usize,
    values: *const f64,
    out: *mut *mut SgDataset,
) -> SgStatus {
    guard(|| {
        let labels = array(labels, n, "labels")?;
        let row_ptr = array(row_ptr, n + 1, "row_ptr")?;
        if row_ptr[0] != 0 || row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("row_ptr must start at 0 and be nondecreasing"));
        }
        let nnz = row_ptr[n];
        let cols = array(col_idx, nnz, "col_idx")?;
        let vals = array(values, nnz, "values")?;
        let rows = row_ptr
            .windows(2)
            .map(|w| (w[0]..w[1]).map(|k| (cols[k], vals[k])).collect())
            .collect();
        let inner = Dataset::from_rows(labels.to_vec(), rows, p)?;
        emit(out, SgDataset { inner }, "out")
    })
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_num_rows(dataset: *const SgDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_num_features(dataset: *const SgDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.num_features())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_dataset_free(dataset: *mut SgDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains on `config->nodes` in-process workers.
///
/// # Safety
/// `dataset` and `config` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_fit(dataset: *const SgDataset, config: *const SgConfig, out: *mut *mut SgModel) -> SgStatus {
    guard(|| {
        let data = &reference(dataset, "dataset")?.inner;
        let c = reference(config, "config")?;
        let cfg = solver_config(c)?;
        if c.nodes == 0 {
            return Err(invalid("nodes must be at least 1"));
        }
        let p = data.num_features();
        let spec = partition_features(&(0..p).collect::<Vec<_>>(), c.nodes, c.seed)?;
        let shards = data.shards(&spec)?;
        let options = SpmdOptions { kappa: cfg.kappa };
        let mut per_rank = spawn_spmd_with(c.nodes, options, |t| {
            let res = fit(&shards[t.rank()], &cfg, t)?;
            let w = gather_weights(t, &res, p)?;
            Ok((res, w))
        })?;
        let (res, weights) = per_rank.swap_remove(0);
        let raw_ids = data.raw_ids.clone();
        let model = SgModel {
            objective: res.final_objective().unwrap_or(f64::NAN),
            iterations: res.history.len(),
            converged: res.converged,
            index: raw_ids.iter().enumerate().map(|(k, &r)| (r, k)).collect(),
            raw_ids,
            weights,
        };
        emit(out, model, "out")
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_model_num_weights(model: *const SgModel) -> usize {
    model.as_ref().map_or(0, |m| m.weights.len())
}

/// Copies the weights and, when `raw_ids` is non-null, the feature id each
/// weight belongs to. `len` must equal `sg_model_num_weights`.
///
/// # Safety
/// `weights` (and `raw_ids` if non-null) must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn sg_model_weights(model: *const SgModel, weights: *mut f64, raw_ids: *mut u64, len: usize) -> SgStatus {
    guard(|| {
        let m = reference(model, "model")?;
        if len != m.weights.len() {
            return Err(invalid(format!("buffer holds {len}, model has {}", m.weights.len())));
        }
        array_mut(weights, len, "weights")?.copy_from_slice(&m.weights);
        if !raw_ids.is_null() {
            array_mut(raw_ids, len, "raw_ids")?.copy_from_slice(&m.raw_ids);
        }
        Ok(())
    })
}

/// Final objective, iteration count and convergence flag. Any out pointer
/// may be null.
///
/// # Safety
/// Non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_model_summary(
    model: *const SgModel,
    objective: *mut f64,
    iterations: *mut usize,
    converged: *mut bool,
) -> SgStatus {
    guard(|| {
        let m = reference(model, "model")?;
        if let Some(o) = objective.as_mut() {
            *o = m.objective;
        }
        if let Some(o) = iterations.as_mut() {
            *o = m.iterations;
        }
        if let Some(o) = converged.as_mut() {
            *o = m.converged;
        }
        Ok(())
    })
}

/// Margins `x_i . beta` for every row of `dataset`, matched by feature id.
/// Features the model never saw contribute nothing.
///
/// # Safety
/// `scores` must hold `len == sg_dataset_num_rows(dataset)` elements.
#[no_mangle]
pub unsafe extern "C" fn sg_model_predict(
    model: *const SgModel,
    dataset: *const SgDataset,
    scores: *mut f64,
    len: usize,
) -> SgStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let data = &reference(dataset, "dataset")?.inner;
        if len != data.n() {
            return Err(invalid(format!("buffer holds {len}, dataset has {} rows", data.n())));
        }
        let out = array_mut(scores, len, "scores")?;
        for (s, row) in out.iter_mut().zip(&data.rows) {
            *s = row
                .iter()
                .filter_map(|&(j, v)| m.index.get(&data.raw_ids[j]).map(|&k| v * m.weights[k]))
                .sum();
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_model_free(model: *mut SgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Area under the precision-recall curve; labels above 0 are positive.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_auprc(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> SgStatus {
    guard(|| {
        let value = splitglm::eval::auprc(array(scores, n, "scores")?, array(labels, n, "labels")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = value;
        Ok(())
    })
}

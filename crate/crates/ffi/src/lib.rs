//! C interface to the `gmdd` tests.
//!
//! Every entry point returns a [`GmddStatus`]. On failure the message is kept
//! per thread and can be read with [`gmdd_last_error`]. Handles are opaque,
//! created by a `*_new` or test function and released by the matching `*_free`.
//! Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;

use gmdd::bootstrap::{wild_bootstrap_pvalue, BootstrapConfig, IcmFamily, Multiplier};
use gmdd::error::Error;
use gmdd::estimators::ModelSpec;
use gmdd::gmdd::{estimate, Estimator, Sample};
use gmdd::kernels::{KernelFamily, KernelSpec};
use gmdd::linalg::Threshold;
use gmdd::mi_test::{mi_test, VSpec};
use gmdd::spec_test::{conditioning_matrix, spec_test, SpecOptions, SpecVSpec};

/// Outcome of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmddStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    DegenerateCovariance = 4,
    ComputationFailed = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmddEstimator {
    Known = 0,
    Plugin = 1,
    Ucentered = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmddIcmFamily {
    Gauss = 0,
    Mdd = 1,
    Dl = 2,
    Esc6 = 3,
}

/// Numeric matrix, `n_rows × n_cols`.
pub struct GmddDataset {
    values: DMatrix<f64>,
}

/// Kernel family bound to a dimension.
pub struct GmddKernel {
    spec: KernelSpec,
}

/// Result of a χ² or bootstrap test.
pub struct GmddTestResult {
    statistic: f64,
    p_value: f64,
    df: usize,
    retained_rank: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(GmddStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => GmddStatus::DimensionMismatch,
            Error::DegenerateCovariance { .. } => GmddStatus::DegenerateCovariance,
            e if e.is_validation() => GmddStatus::InvalidArgument,
            _ => GmddStatus::ComputationFailed,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GmddStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, recording its error or panic.
fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> GmddStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GmddStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            GmddStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn gmdd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gmdd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies a row-major `n_rows × n_cols` buffer into a new dataset.
///
/// # Safety
/// `data` must point to `n_rows * n_cols` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gmdd_dataset_new(
    data: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut *mut GmddDataset,
) -> GmddStatus {
    guarded(|| {
        let len = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| Failure(GmddStatus::InvalidArgument, "dataset size overflows".into()))?;
        let values = slice(data, len, "data")?;
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Failure(
                GmddStatus::InvalidArgument,
                format!("non-finite value at row {}, column {}", bad / n_cols.max(1), bad % n_cols.max(1)),
            ));
        }
        emit(out, GmddDataset { values: DMatrix::from_row_slice(n_rows, n_cols, values) })
    })
}

/// # Safety
/// `ds` must be null or a handle from [`gmdd_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gmdd_dataset_free(ds: *mut GmddDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gmdd_dataset_rows(ds: *const GmddDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.values.nrows())
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gmdd_dataset_cols(ds: *const GmddDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.values.ncols())
}

/// Parses a kernel name such as `gauss`, `mdd`, `srb:0.5` or `laplace:2`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gmdd_kernel_new(name: *const c_char, dim: usize, out: *mut *mut GmddKernel) -> GmddStatus {
    guarded(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        let text = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Failure(GmddStatus::InvalidArgument, "kernel name is not UTF-8".into()))?;
        let family: KernelFamily = text.parse()?;
        emit(out, GmddKernel { spec: KernelSpec::new(family, dim)? })
    })
}

/// # Safety
/// `k` must be null or a handle from [`gmdd_kernel_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gmdd_kernel_free(k: *mut GmddKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Estimates the metric of `u` (length `n_rows(z)`) given `z`.
///
/// # Safety
/// Pointers must be valid; `u` must hold `n_rows(z)` doubles.
#[no_mangle]
pub unsafe extern "C" fn gmdd_estimate(
    u: *const f64,
    z: *const GmddDataset,
    kernel: *const GmddKernel,
    estimator: GmddEstimator,
    out: *mut f64,
) -> GmddStatus {
    guarded(|| {
        let z = deref(z, "z")?;
        let k = deref(kernel, "kernel")?;
        let u = slice(u, z.values.nrows(), "u")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let which = match estimator {
            GmddEstimator::Known => Estimator::Known,
            GmddEstimator::Plugin => Estimator::Plugin,
            GmddEstimator::Ucentered => Estimator::Ucentered,
        };
        *out = estimate(&Sample::new(u.to_vec(), z.values.clone())?, &k.spec, which)?;
        Ok(())
    })
}

/// χ² test of `E[U|Z] = 0` with the pair `V = (h(Z), U − h(Z))`, `h(Z) = exp(0.5 Σ Z_l)`.
///
/// # Safety
/// Pointers must be valid; `u` must hold `n_rows(z)` doubles.
#[no_mangle]
pub unsafe extern "C" fn gmdd_mi_test(
    u: *const f64,
    z: *const GmddDataset,
    kernel: *const GmddKernel,
    out: *mut *mut GmddTestResult,
) -> GmddStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let z = deref(z, "z")?;
        let k = deref(kernel, "kernel")?;
        let u = slice(u, z.values.nrows(), "u")?;
        let r = mi_test(u, &z.values, &VSpec::default(), &k.spec, Threshold::default())?;
        emit(
            out,
            GmddTestResult { statistic: r.statistic, p_value: r.p_value, df: r.df, retained_rank: r.retained_rank },
        )
    })
}

unsafe fn linear_model(instruments: *const GmddDataset, intercept: bool) -> ModelSpec {
    let model = match instruments.as_ref() {
        Some(w) => ModelSpec::iv(w.values.clone()),
        None => ModelSpec::ols(),
    };
    if intercept {
        model.with_intercept()
    } else {
        model
    }
}

/// χ² specification test of `y = X β + U`, by IV when `instruments` is non-null.
///
/// # Safety
/// Pointers must be valid; `y` must hold `n_rows(x)` doubles. `instruments` may be null.
#[no_mangle]
pub unsafe extern "C" fn gmdd_spec_test(
    y: *const f64,
    x: *const GmddDataset,
    instruments: *const GmddDataset,
    intercept: bool,
    kernel: *const GmddKernel,
    out: *mut *mut GmddTestResult,
) -> GmddStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = deref(x, "x")?;
        let k = deref(kernel, "kernel")?;
        let y = slice(y, x.values.nrows(), "y")?;
        let model = linear_model(instruments, intercept);
        let r = spec_test(y, &x.values, &model, &SpecVSpec::default(), &k.spec, &SpecOptions::default())?;
        emit(
            out,
            GmddTestResult { statistic: r.statistic, p_value: r.p_value, df: r.df, retained_rank: r.retained_rank },
        )
    })
}

/// Wild-bootstrap ICM specification test with Mammen multipliers.
///
/// # Safety
/// Pointers must be valid; `y` must hold `n_rows(x)` doubles. `instruments` may be null.
#[no_mangle]
pub unsafe extern "C" fn gmdd_spec_boot(
    y: *const f64,
    x: *const GmddDataset,
    instruments: *const GmddDataset,
    intercept: bool,
    family: GmddIcmFamily,
    replicates: usize,
    seed: u64,
    out: *mut *mut GmddTestResult,
) -> GmddStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = deref(x, "x")?;
        let y = slice(y, x.values.nrows(), "y")?;
        let model = linear_model(instruments, intercept);
        let family = match family {
            GmddIcmFamily::Gauss => IcmFamily::Gauss,
            GmddIcmFamily::Mdd => IcmFamily::Mdd,
            GmddIcmFamily::Dl => IcmFamily::Dl,
            GmddIcmFamily::Esc6 => IcmFamily::Esc6,
        };
        let cfg = BootstrapConfig { replicates, multiplier: Multiplier::Mammen, seed };
        let z = conditioning_matrix(&model, &x.values);
        let r = wild_bootstrap_pvalue(y, &x.values, &z, &model, family, &cfg)?;
        emit(out, GmddTestResult { statistic: r.statistic, p_value: r.p_value, df: 0, retained_rank: 0 })
    })
}

/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn gmdd_result_statistic(r: *const GmddTestResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.statistic)
}

/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn gmdd_result_p_value(r: *const GmddTestResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.p_value)
}

/// Degrees of freedom; 0 for bootstrap results.
///
/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn gmdd_result_df(r: *const GmddTestResult) -> usize {
    r.as_ref().map_or(0, |r| r.df)
}

/// Retained rank of the covariance; 0 for bootstrap results.
///
/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn gmdd_result_retained_rank(r: *const GmddTestResult) -> usize {
    r.as_ref().map_or(0, |r| r.retained_rank)
}

/// # Safety
/// `r` must be null or a result handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gmdd_result_free(r: *mut GmddTestResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

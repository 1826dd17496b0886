//! C ABI over `panel_selinf`.
//!
//! Every fallible call returns a [`PsStatus`] and writes its result through
//! an out-pointer. On failure [`ps_last_error`] describes the most recent
//! error on the calling thread. Handles are opaque and released with the
//! matching `*_free` function; strings returned by the library are released
//! with [`ps_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use panel_selinf::kmeans::{run_kmeans_with, ClusterRun, ClusterRunRecord};
use panel_selinf::panel::{fit_individuals, load_panel, CovarianceKind, Estimator, GmmWeight, PanelDataset, UnitSeries};
use panel_selinf::selective::{selective_test_with, Method, SelectiveTestRecord, SelectiveTestResult, Target};
use panel_selinf::sim::{dgp_generate, DgpId, DgpSpec};
use panel_selinf::Error;

/// Status codes. `PS_INPUT_ERROR` and `PS_NUMERICAL_ERROR` match the exit
/// codes of the command-line tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    PsOk = 0,
    PsNullPointer = 1,
    PsInputError = 2,
    PsNumericalError = 3,
    PsPanic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsMethod {
    PsLs = 0,
    PsGmm = 1,
}

/// Opaque balanced panel.
pub struct PsPanel(PanelDataset);

/// Opaque clustering run together with its group estimates.
pub struct PsRun {
    run: ClusterRun,
    method: Method,
}

/// Opaque selective test result.
pub struct PsTest(SelectiveTestResult);

/// Scalar summary of a [`PsTest`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PsTestSummary {
    pub statistic: f64,
    pub p_selective: f64,
    pub p_naive: f64,
    pub wald_stat: f64,
    pub log_support_mass: f64,
    /// Number of disjoint intervals in the truncation set.
    pub n_intervals: usize,
    pub fallback: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e.exit_code() {
        3 => PsStatus::PsNumericalError,
        _ => PsStatus::PsInputError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PsStatus>) -> PsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::PsOk,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PsStatus::PsPanic
        }
    }
}

fn lift<T>(r: panel_selinf::Result<T>) -> Result<T, PsStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn input_error(msg: &str) -> PsStatus {
    set_error(msg.into());
    PsStatus::PsInputError
}

fn null(name: &str) -> PsStatus {
    set_error(format!("{name} is null"));
    PsStatus::PsNullPointer
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, PsStatus> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), PsStatus> {
    if len < values.len() {
        return Err(input_error(&format!("buffer holds {len} values, {} needed", values.len())));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a panel CSV with columns `unit,time,y,x1..xp[,z1..zq]`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_panel_load_csv(path: *const c_char, out: *mut *mut PsPanel) -> PsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| input_error("path is not UTF-8"))?;
        let file = lift(File::open(path).map_err(Error::from))?;
        let data = lift(load_panel(BufReader::new(file), None))?;
        put(out, PsPanel(data));
        Ok(())
    })
}

/// Builds a panel without instruments from dense arrays. `y` holds
/// `n_units * t` values, unit by unit in time order; `x` holds
/// `n_units * t * p` values with the regressors of one observation adjacent.
///
/// # Safety
/// `y` and `x` must point to that many readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ps_panel_from_arrays(
    n_units: usize,
    t: usize,
    p: usize,
    y: *const f64,
    x: *const f64,
    out: *mut *mut PsPanel,
) -> PsStatus {
    guard(|| {
        if y.is_null() || x.is_null() || out.is_null() {
            return Err(null("y, x or out"));
        }
        let y = std::slice::from_raw_parts(y, n_units * t);
        let x = std::slice::from_raw_parts(x, n_units * t * p);
        let series = (0..n_units)
            .map(|i| UnitSeries {
                y: DVector::from_column_slice(&y[i * t..(i + 1) * t]),
                x: DMatrix::from_row_slice(t, p, &x[i * t * p..(i + 1) * t * p]),
                z: None,
            })
            .collect();
        let data = lift(PanelDataset::new(
            (1..=n_units).map(|i| i.to_string()).collect(),
            (1..=t as i64).collect(),
            (1..=p).map(|j| format!("x{j}")).collect(),
            Vec::new(),
            series,
        ))?;
        put(out, PsPanel(data));
        Ok(())
    })
}

/// Draws one panel from simulation design `dgp` (1 to 6).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_panel_simulate(
    dgp: u32,
    n_units: usize,
    t: usize,
    delta: f64,
    seed: u64,
    out: *mut *mut PsPanel,
) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let id: DgpId = lift(dgp.to_string().parse())?;
        let sim = lift(dgp_generate(&DgpSpec::new(id, n_units, t, delta, seed)))?;
        put(out, PsPanel(sim.data));
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_panel_n(panel: *const PsPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.n())
}

/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_panel_t(panel: *const PsPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.t())
}

/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_panel_p(panel: *const PsPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.p())
}

/// # Safety
/// `panel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_panel_free(panel: *mut PsPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Estimates unit slopes by `method` and clusters them into `k` groups.
/// `max_iter` of 0 selects the library default.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_fit(
    panel: *const PsPanel,
    k: usize,
    seed: u64,
    method: PsMethod,
    max_iter: usize,
    out: *mut *mut PsRun,
) -> PsStatus {
    guard(|| {
        let panel = deref(panel, "panel")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (estimator, method) = match method {
            PsMethod::PsLs => (Estimator::Ls, Method::Ls),
            PsMethod::PsGmm => (Estimator::Gmm(GmmWeight::TwoStage), Method::Gmm),
        };
        let max_iter = if max_iter == 0 { panel_selinf::kmeans::DEFAULT_MAX_ITER } else { max_iter };
        let fits = lift(fit_individuals(&panel.0, estimator))?;
        let run = lift(run_kmeans_with(&fits, k, seed, max_iter, CovarianceKind::default()))?;
        put(out, PsRun { run, method });
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_run_k(run: *const PsRun) -> usize {
    run.as_ref().map_or(0, |r| r.run.k)
}

/// Writes the 1-based group of each of the `len` units.
///
/// # Safety
/// `run` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ps_run_labels(run: *const PsRun, out: *mut usize, len: usize) -> PsStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let labels = run.run.partition.labels();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < labels.len() {
            return Err(input_error(&format!("buffer holds {len} labels, {} needed", labels.len())));
        }
        for (i, g) in labels.iter().enumerate() {
            *out.add(i) = g + 1;
        }
        Ok(())
    })
}

/// Writes the `k * p` group slopes, group by group.
///
/// # Safety
/// `run` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ps_run_alpha(run: *const PsRun, out: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let alpha: Vec<f64> = run.run.estimates.alpha.iter().flat_map(|a| a.iter().copied()).collect();
        copy_out(&alpha, out, len)
    })
}

/// JSON record of the run; free with [`ps_string_free`]. Null on failure.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_run_json(run: *const PsRun) -> *mut c_char {
    let Some(run) = run.as_ref() else {
        null("run");
        return ptr::null_mut();
    };
    serde_json::to_string(&ClusterRunRecord::from(&run.run)).map_or(ptr::null_mut(), to_c_string)
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_run_free(run: *mut PsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Selective test of equal slopes between groups `k` and `k_prime`
/// (1-based). `covariate` 0 tests all slopes jointly; `j > 0` tests slope
/// `j` alone.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_test(
    run: *const PsRun,
    k: usize,
    k_prime: usize,
    covariate: usize,
    out: *mut *mut PsTest,
) -> PsStatus {
    guard(|| {
        let run = deref(run, "run")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if k == 0 || k_prime == 0 {
            return Err(input_error("groups are 1-based"));
        }
        let target = match covariate {
            0 => Target::All,
            j => Target::Covariate(j - 1),
        };
        let r = &run.run;
        let result = lift(selective_test_with(r, k - 1, k_prime - 1, target, &r.estimates.sigma, run.method))?;
        put(out, PsTest(result));
        Ok(())
    })
}

/// # Safety
/// `test` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_test_summary(test: *const PsTest, out: *mut PsTestSummary) -> PsStatus {
    guard(|| {
        let t = &deref(test, "test")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = PsTestSummary {
            statistic: t.statistic,
            p_selective: t.p_selective,
            p_naive: t.p_naive,
            wald_stat: t.wald_stat,
            log_support_mass: t.log_support_mass,
            n_intervals: t.truncation.intervals().len(),
            fallback: t.fallback,
        };
        Ok(())
    })
}

/// Writes the truncation set as `lo, hi` pairs; `len` counts doubles. An
/// unbounded upper end is written as infinity.
///
/// # Safety
/// `test` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ps_test_truncation(test: *const PsTest, out: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        let t = &deref(test, "test")?.0;
        let ends: Vec<f64> = t.truncation.intervals().iter().flat_map(|i| [i.lo, i.hi]).collect();
        copy_out(&ends, out, len)
    })
}

/// JSON record of the test; free with [`ps_string_free`]. Null on failure.
///
/// # Safety
/// `test` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_test_json(test: *const PsTest) -> *mut c_char {
    let Some(t) = test.as_ref() else {
        null("test");
        return ptr::null_mut();
    };
    serde_json::to_string(&SelectiveTestRecord::from(&t.0)).map_or(ptr::null_mut(), to_c_string)
}

/// # Safety
/// `test` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_test_free(test: *mut PsTest) {
    if !test.is_null() {
        drop(Box::from_raw(test));
    }
}

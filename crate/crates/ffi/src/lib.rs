//! C ABI over `sgdlab`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an
//! [`SgdlabStatus`]; on failure, [`sgdlab_last_error`] describes the most
//! recent error on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sgdlab::config::{parse_config, ConfigError, Manifest};
use sgdlab::export::estimates_csv;
use sgdlab::harness::{run_experiment, ExperimentConfig, HarnessError, MonteCarloEstimate};
use sgdlab::schedules::{numeric_probe, PowerSchedule};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgdlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Divergence = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// An experiment config ready to run.
pub struct SgdlabExperiment {
    config: ExperimentConfig,
}

/// Aggregated results of a finished experiment.
pub struct SgdlabEstimate {
    estimate: MonteCarloEstimate,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SgdlabScheduleClass {
    pub diverges: bool,
    pub square_summable: bool,
    pub thm22_condition: bool,
    pub damping_admissible: bool,
    /// Whether `l_mu` is meaningful.
    pub has_l_mu: bool,
    pub l_mu: f64,
    /// Partial sums up to the requested horizon.
    pub sum_alpha: f64,
    pub sum_alpha_sq: f64,
    pub tail_product: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SgdlabEstimateRow {
    pub checkpoint: u64,
    pub mean_grad_sq: f64,
    pub se_grad_sq: f64,
    pub mean_gap: f64,
    pub se_gap: f64,
    /// Whether the averaged-iterate columns are present.
    pub has_avg_gap: bool,
    pub mean_avg_gap: f64,
    pub se_avg_gap: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SgdlabStatus, String);

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(SgdlabStatus::Config, e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match e {
            HarnessError::Divergence { .. } => SgdlabStatus::Divergence,
            HarnessError::Config(_) => SgdlabStatus::Config,
            HarnessError::Probe(_) => SgdlabStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgdlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SgdlabStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgdlabStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SgdlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SgdlabStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sgdlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sgdlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Classifies `alpha_k = alpha_c·k^(−alpha_a)`, `mu_k = mu_m·k^(−mu_b)` and
/// fills partial sums up to `horizon` (at least 10).
///
/// # Safety
/// `out` must be null or point to writable memory for one struct.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_classify(
    alpha_c: f64,
    alpha_a: f64,
    mu_m: f64,
    mu_b: f64,
    horizon: u64,
    out: *mut SgdlabScheduleClass,
) -> SgdlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bad = |e: sgdlab::schedules::ScheduleError| Failure(SgdlabStatus::InvalidArgument, e.to_string());
        let s = PowerSchedule::new(alpha_c, alpha_a, mu_m, mu_b).map_err(bad)?;
        let sums = numeric_probe(&s, horizon).map_err(bad)?;
        let c = s.class();
        *out = SgdlabScheduleClass {
            diverges: c.diverges,
            square_summable: c.square_summable,
            thm22_condition: c.thm22_condition,
            damping_admissible: c.damping_admissible,
            has_l_mu: c.l_mu.is_some(),
            l_mu: c.l_mu.unwrap_or(0.0),
            sum_alpha: sums.sum_alpha,
            sum_alpha_sq: sums.sum_alpha_sq,
            tail_product: sums.tail_product,
        };
        Ok(())
    })
}

/// Parses a TOML experiment config. `overrides` holds `n_overrides`
/// strings of the form `section.key=value`; it may be null when
/// `n_overrides` is 0.
///
/// # Safety
/// `toml` must be a NUL-terminated string, `overrides` must point to
/// `n_overrides` NUL-terminated strings, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_experiment_from_toml(
    toml: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut SgdlabExperiment,
) -> SgdlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(toml, "toml")?;
        if overrides.is_null() && n_overrides > 0 {
            return Err(null("overrides"));
        }
        let mut list = Vec::with_capacity(n_overrides);
        for i in 0..n_overrides {
            list.push(read_str(*overrides.add(i), "override")?.to_string());
        }
        let config = parse_config(text, &list)?;
        *out = Box::into_raw(Box::new(SgdlabExperiment { config }));
        Ok(())
    })
}

/// Rebuilds an experiment from a manifest written by `experiment`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_experiment_from_manifest(
    json: *const c_char,
    out: *mut *mut SgdlabExperiment,
) -> SgdlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = Manifest::from_json(read_str(json, "json")?)?.config;
        *out = Box::into_raw(Box::new(SgdlabExperiment { config }));
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_experiment_set_seed(exp: *mut SgdlabExperiment, seed: u64) -> SgdlabStatus {
    guard(|| {
        let exp = exp.as_mut().ok_or_else(|| null("experiment"))?;
        exp.config.master_seed = seed;
        Ok(())
    })
}

/// The resolved config as manifest JSON; release with [`sgdlab_string_free`].
///
/// # Safety
/// `exp` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_experiment_manifest(
    exp: *const SgdlabExperiment,
    out: *mut *mut c_char,
) -> SgdlabStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("experiment"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = owned_string(Manifest::new(&exp.config).to_json());
        Ok(())
    })
}

/// Runs every replica. Blocks until done; honours `SGDLAB_THREADS`.
///
/// # Safety
/// `exp` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_experiment_run(
    exp: *const SgdlabExperiment,
    out: *mut *mut SgdlabEstimate,
) -> SgdlabStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null("experiment"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let estimate = run_experiment(&exp.config)?;
        *out = Box::into_raw(Box::new(SgdlabEstimate { estimate }));
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_experiment_free(exp: *mut SgdlabExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Number of checkpoint rows, 0 for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_estimate_len(est: *const SgdlabEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.estimate.rows.len())
}

/// Replicas that diverged and were left out of the means.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_estimate_diverged(est: *const SgdlabEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.estimate.diverged)
}

/// # Safety
/// `est` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_estimate_row(
    est: *const SgdlabEstimate,
    index: usize,
    out: *mut SgdlabEstimateRow,
) -> SgdlabStatus {
    guard(|| {
        let est = est.as_ref().ok_or_else(|| null("estimate"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rows = &est.estimate.rows;
        let r = rows.get(index).ok_or_else(|| {
            Failure(
                SgdlabStatus::OutOfRange,
                format!("row {index} out of range, {} rows", rows.len()),
            )
        })?;
        *out = SgdlabEstimateRow {
            checkpoint: r.checkpoint,
            mean_grad_sq: r.mean_grad_sq,
            se_grad_sq: r.se_grad_sq,
            mean_gap: r.mean_gap,
            se_gap: r.se_gap,
            has_avg_gap: r.mean_avg_gap.is_some(),
            mean_avg_gap: r.mean_avg_gap.unwrap_or(f64::NAN),
            se_avg_gap: r.se_avg_gap.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// The estimates table as CSV; release with [`sgdlab_string_free`].
///
/// # Safety
/// `est` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_estimate_csv(est: *const SgdlabEstimate, out: *mut *mut c_char) -> SgdlabStatus {
    guard(|| {
        let est = est.as_ref().ok_or_else(|| null("estimate"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = owned_string(estimates_csv(&est.estimate));
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_estimate_free(est: *mut SgdlabEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).unwrap_or_default().into_raw()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgdlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_out_pointer_is_reported() {
        let status = unsafe { sgdlab_classify(1.0, 0.5, 0.0, 0.0, 100, ptr::null_mut()) };
        assert_eq!(status, SgdlabStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(sgdlab_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "out is null");
    }

    #[test]
    fn version_matches_crate() {
        let v = unsafe { CStr::from_ptr(sgdlab_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

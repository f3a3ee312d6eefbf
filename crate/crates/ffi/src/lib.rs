//! C ABI over the laboratory core: closed-form exponents, trace sampling,
//! hitting-probability estimation, and the martingale drift test.
//!
//! Conventions
//! - Every fallible call returns `SleStatus`; results land in out-pointers
//!   that are written only on `SLE_STATUS_OK`.
//! - `sle_last_error` returns a thread-local message for the most recent
//!   failure on the calling thread, valid until the next failing call.
//! - Stateful objects are opaque handles with explicit `_free`; passing a
//!   handle after free is undefined behavior, passing NULL is caught.
//! - Panics never unwind across the boundary; they map to
//!   `SLE_STATUS_PANIC`.
//!
//! The committed header `include/sle_lab.h` is generated with cbindgen and
//! guarded by a freshness test.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num::complex::Complex64;
use sle_lab::kac::{self, KacLabel};
use sle_lab::loewner::{sample_driving, trace_from_driving, Trace};
use sle_lab::montecarlo;
use sle_lab::multi::{self, rationalize_kappa};

/// Status codes for every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SleStatus {
    /// Success; out-parameters are valid.
    SleStatusOk = 0,
    /// A NULL pointer was passed where an object or out-pointer is required.
    SleStatusNullArg = 1,
    /// Parameter outside the documented domain (kappa range, label, sizes).
    SleStatusDomain = 2,
    /// The computation could not produce a finite result.
    SleStatusNumeric = 3,
    /// An index was out of bounds for the handle's contents.
    SleStatusRange = 4,
    /// Internal panic caught at the boundary; see sle_last_error.
    SleStatusPanic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let safe = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = safe);
}

fn fail(status: SleStatus, msg: &str) -> SleStatus {
    set_error(msg);
    status
}

/// Runs `f` with panics converted to a status, never unwinding into C.
fn guarded(f: impl FnOnce() -> SleStatus) -> SleStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SleStatus::SleStatusPanic, "internal panic"),
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> SleStatus {
    if out.is_null() {
        return fail(SleStatus::SleStatusNullArg, "out pointer is NULL");
    }
    unsafe { out.write(value) };
    SleStatus::SleStatusOk
}

/// Message for the most recent failure on this thread. Never NULL; empty
/// string when no failure has occurred. Valid until the next failing call
/// on the same thread.
#[no_mangle]
pub extern "C" fn sle_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sle_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn pin_kappa(kappa: f64) -> Result<sle_lab::kac::Kappa, String> {
    rationalize_kappa(kappa).map_err(|e| e.to_string())
}

/// Central charge c(kappa) = (3kappa - 8)(6 - kappa) / (2kappa).
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sle_central_charge(kappa: f64, out: *mut f64) -> SleStatus {
    guarded(|| match pin_kappa(kappa) {
        Ok(kq) => {
            let c = kac::rational_to_f64(&kac::central_charge(&kq));
            unsafe { write_out(out, c) }
        }
        Err(e) => fail(SleStatus::SleStatusDomain, &e),
    })
}

/// Kac weight h_{(r,s)}(kappa); r and s must be at least 1.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sle_kac_weight(kappa: f64, r: u32, s: u32, out: *mut f64) -> SleStatus {
    guarded(|| {
        let kq = match pin_kappa(kappa) {
            Ok(kq) => kq,
            Err(e) => return fail(SleStatus::SleStatusDomain, &e),
        };
        let label = match KacLabel::new(r, s) {
            Ok(l) => l,
            Err(e) => return fail(SleStatus::SleStatusDomain, &e.to_string()),
        };
        let h = kac::rational_to_f64(&kac::kac_weight(&kq, label));
        unsafe { write_out(out, h) }
    })
}

/// Trace dimension min(1 + kappa/8, 2).
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sle_trace_dimension(kappa: f64, out: *mut f64) -> SleStatus {
    guarded(|| match pin_kappa(kappa) {
        Ok(kq) => {
            let d = kac::rational_to_f64(&kac::trace_dimension(&kq));
            unsafe { write_out(out, d) }
        }
        Err(e) => fail(SleStatus::SleStatusDomain, &e),
    })
}

/// Hull boundary dimension: the trace value for kappa <= 4 and 1 + 2/kappa
/// for 4 < kappa < 8; kappa >= 8 is out of range.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sle_hull_dimension(kappa: f64, out: *mut f64) -> SleStatus {
    guarded(|| {
        let kq = match pin_kappa(kappa) {
            Ok(kq) => kq,
            Err(e) => return fail(SleStatus::SleStatusDomain, &e),
        };
        match kac::hull_dimension(&kq) {
            Ok(d) => unsafe { write_out(out, kac::rational_to_f64(&d)) },
            Err(e) => fail(SleStatus::SleStatusDomain, &e.to_string()),
        }
    })
}

/// Distance-decay exponent 2 - d for the phase-appropriate dimension d
/// (trace for kappa <= 4, hull boundary for 4 < kappa < 8).
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sle_distance_exponent(kappa: f64, out: *mut f64) -> SleStatus {
    guarded(|| match montecarlo::distance_exponent(kappa) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => fail(SleStatus::SleStatusDomain, &e.to_string()),
    })
}

/// Opaque sampled trace; create with sle_trace_new, release with
/// sle_trace_free.
pub struct SleTrace {
    inner: Trace,
}

/// Samples a driving path of speed kappa on n uniform steps over [0, T] and
/// computes its trace. On success writes a heap handle the caller owns.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sle_trace_new(
    kappa: f64,
    t_total: f64,
    n: usize,
    seed: u64,
    out: *mut *mut SleTrace,
) -> SleStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SleStatus::SleStatusNullArg, "out pointer is NULL");
        }
        let path = match sample_driving(kappa, t_total, n, seed) {
            Ok(p) => p,
            Err(e) => return fail(SleStatus::SleStatusDomain, &e.to_string()),
        };
        match trace_from_driving(&path) {
            Ok(tr) => {
                let handle = Box::into_raw(Box::new(SleTrace { inner: tr }));
                unsafe { out.write(handle) };
                SleStatus::SleStatusOk
            }
            Err(e) => fail(SleStatus::SleStatusNumeric, &e.to_string()),
        }
    })
}

/// Number of trace points (n + 1 including the origin).
///
/// # Safety
/// `tr` must be a live handle from sle_trace_new or NULL.
#[no_mangle]
pub unsafe extern "C" fn sle_trace_len(tr: *const SleTrace) -> usize {
    if tr.is_null() {
        return 0;
    }
    unsafe { &*tr }.inner.points.len()
}

/// Reads point i as (t, re, im). Out-pointers may be NULL individually to
/// skip a component.
///
/// # Safety
/// `tr` must be a live handle; non-NULL out-pointers must be valid doubles.
#[no_mangle]
pub unsafe extern "C" fn sle_trace_point(
    tr: *const SleTrace,
    i: usize,
    t: *mut f64,
    re: *mut f64,
    im: *mut f64,
) -> SleStatus {
    guarded(|| {
        if tr.is_null() {
            return fail(SleStatus::SleStatusNullArg, "trace handle is NULL");
        }
        let inner = &unsafe { &*tr }.inner;
        if i >= inner.points.len() {
            return fail(
                SleStatus::SleStatusRange,
                &format!("index {i} out of range for {} points", inner.points.len()),
            );
        }
        unsafe {
            if !t.is_null() {
                t.write(inner.times[i]);
            }
            if !re.is_null() {
                re.write(inner.points[i].re);
            }
            if !im.is_null() {
                im.write(inner.points[i].im);
            }
        }
        SleStatus::SleStatusOk
    })
}

/// Releases a trace handle; NULL is a no-op.
///
/// # Safety
/// `tr` must be a live handle from sle_trace_new or NULL; it must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sle_trace_free(tr: *mut SleTrace) {
    if !tr.is_null() {
        drop(unsafe { Box::from_raw(tr) });
    }
}

/// Hitting-probability estimate for one radius.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct SleHitEstimate {
    pub epsilon: f64,
    pub hits: u64,
    pub trials: u64,
    pub p_hat: f64,
    /// Binomial standard error of p_hat.
    pub std_err: f64,
}

/// Monte Carlo estimate of P[dist(z0, trace) <= epsilon] by evolving z0
/// through the discrete flow. Deterministic in (all inputs, seed).
///
/// # Safety
/// `out` must be a valid pointer to an estimate struct.
#[no_mangle]
pub unsafe extern "C" fn sle_estimate_hit(
    kappa: f64,
    z0_re: f64,
    z0_im: f64,
    epsilon: f64,
    trials: u64,
    t_total: f64,
    n_steps: usize,
    seed: u64,
    out: *mut SleHitEstimate,
) -> SleStatus {
    guarded(|| {
        let z0 = Complex64::new(z0_re, z0_im);
        match montecarlo::estimate_hit(kappa, z0, epsilon, trials, t_total, n_steps, seed) {
            Ok(e) => unsafe {
                write_out(
                    out,
                    SleHitEstimate {
                        epsilon: e.epsilon,
                        hits: e.hits,
                        trials: e.trials,
                        p_hat: e.p_hat,
                        std_err: e.stderr,
                    },
                )
            },
            Err(e) => fail(SleStatus::SleStatusDomain, &e.to_string()),
        }
    })
}

/// Steps required so the grid resolves hits at the given radius.
#[no_mangle]
pub extern "C" fn sle_resolution_steps(kappa: f64, t_total: f64, epsilon: f64) -> usize {
    montecarlo::resolution_steps(kappa, t_total, epsilon)
}

/// Martingale drift-test report for a two-curve product run.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct SleDriftReport {
    pub paths: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Sample mean of the final weight; 1 within noise when the weight is
    /// a martingale.
    pub mean: f64,
    pub std_err: f64,
    /// Mean under the flipped Schwarzian sign, for the same paths.
    pub mean_flipped: f64,
}

/// Runs the two-curve martingale drift test: paths independent product runs
/// from tips (x0_left, x0_right) to capacity time t_end, reporting the
/// sample mean of the final weight. steps = 0 selects the resolution
/// default.
///
/// # Safety
/// `out` must be a valid pointer to a report struct.
#[no_mangle]
pub unsafe extern "C" fn sle_martingale_check(
    kappa: f64,
    x0_left: f64,
    x0_right: f64,
    t_end: f64,
    paths: usize,
    seed: u64,
    steps: usize,
    out: *mut SleDriftReport,
) -> SleStatus {
    guarded(|| {
        let steps = if steps == 0 { None } else { Some(steps) };
        match multi::martingale_drift_test_with(kappa, (x0_left, x0_right), t_end, paths, seed, steps)
        {
            Ok(r) => unsafe {
                write_out(
                    out,
                    SleDriftReport {
                        paths: r.paths as u64,
                        accepted: r.accepted as u64,
                        rejected: r.rejected as u64,
                        mean: r.mean,
                        std_err: r.stderr,
                        mean_flipped: r.mean_flipped,
                    },
                )
            },
            Err(e) => fail(SleStatus::SleStatusDomain, &e.to_string()),
        }
    })
}

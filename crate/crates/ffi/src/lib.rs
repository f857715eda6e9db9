//! C ABI over the `ptm` library.
//!
//! Every function returns a [`PtmStatus`]; results are written through out
//! pointers. On failure the message is available from
//! [`ptm_last_error_message`] on the calling thread until the next call.
//! Handles returned through `out` pointers are owned by the caller and must
//! be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ptm::bone;
use ptm::cli::{self, ExperimentConfig, Format};
use ptm::counting::{CountingLaw, NnpsFamily};
use ptm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Unsupported = 3,
    Numeric = 4,
    Config = 5,
    Io = 6,
    InvalidUtf8 = 7,
    Panic = 8,
}

/// Opaque counting law handle.
pub struct PtmCountingLaw {
    inner: CountingLaw,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> PtmStatus {
    match err {
        Error::InvalidParameter { .. } | Error::Domain { .. } | Error::NullRestriction | Error::NotDisjoint | Error::Partition(_) => {
            PtmStatus::InvalidParameter
        }
        Error::UnsupportedFamily(_) | Error::AnalyticUnavailable(_) | Error::HypothesisViolation(_) => PtmStatus::Unsupported,
        Error::DivergedSeries { .. } | Error::Numeric(_) | Error::StepSize { .. } | Error::Horizon(_) => PtmStatus::Numeric,
        Error::Config { .. } => PtmStatus::Config,
        Error::Io(_) => PtmStatus::Io,
    }
}

/// Runs `body`, recording errors and converting panics.
fn guard(body: impl FnOnce() -> Result<(), (PtmStatus, String)>) -> PtmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PtmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PtmStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (PtmStatus, String)>;
}

impl<T> IntoFfi<T> for ptm::Result<T> {
    fn ffi(self) -> Result<T, (PtmStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (PtmStatus, String) {
    (PtmStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn law_ref<'a>(law: *const PtmCountingLaw) -> Result<&'a CountingLaw, (PtmStatus, String)> {
    unsafe { law.as_ref() }.map(|l| &l.inner).ok_or_else(|| null("law"))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), (PtmStatus, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn new_law(out: *mut *mut PtmCountingLaw, law: ptm::Result<CountingLaw>) -> PtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = law.ffi()?;
        unsafe { out.write(Box::into_raw(Box::new(PtmCountingLaw { inner }))) };
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `ptm_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ptm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ptm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ptm_poisson_new(lambda: f64, out: *mut *mut PtmCountingLaw) -> PtmStatus {
    unsafe { new_law(out, CountingLaw::poisson(lambda)) }
}

/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ptm_binomial_new(n: u64, p: f64, out: *mut *mut PtmCountingLaw) -> PtmStatus {
    unsafe { new_law(out, CountingLaw::binomial(n, p)) }
}

/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ptm_negative_binomial_new(r: f64, theta: f64, out: *mut *mut PtmCountingLaw) -> PtmStatus {
    unsafe { new_law(out, CountingLaw::negative_binomial(r, theta)) }
}

/// Power-series law with finitely many coefficients `a_0, ..., a_{len-1}`.
///
/// # Safety
/// `coeffs` must point to `len` readable doubles; `out` must be valid for a
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn ptm_nnps_new(coeffs: *const f64, len: usize, theta: f64, out: *mut *mut PtmCountingLaw) -> PtmStatus {
    if coeffs.is_null() {
        return guard(|| Err(null("coeffs")));
    }
    let coeffs = unsafe { std::slice::from_raw_parts(coeffs, len) }.to_vec();
    let law = NnpsFamily::from_coeffs("coefficients", coeffs).and_then(|f| CountingLaw::nnps(f, theta));
    unsafe { new_law(out, law) }
}

/// # Safety
/// `law` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ptm_law_free(law: *mut PtmCountingLaw) {
    if !law.is_null() {
        drop(unsafe { Box::from_raw(law) });
    }
}

/// `E t^K`.
///
/// # Safety
/// `law` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ptm_law_pgf(law: *const PtmCountingLaw, t: f64, out: *mut f64) -> PtmStatus {
    guard(|| {
        let v = unsafe { law_ref(law) }?.pgf(t).ffi()?;
        unsafe { write_out(out, v, "out") }
    })
}

/// `E (1 - t)^K`.
///
/// # Safety
/// `law` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ptm_law_apgf(law: *const PtmCountingLaw, t: f64, out: *mut f64) -> PtmStatus {
    guard(|| {
        let v = unsafe { law_ref(law) }?.apgf(t).ffi()?;
        unsafe { write_out(out, v, "out") }
    })
}

/// # Safety
/// `law` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ptm_law_pmf(law: *const PtmCountingLaw, k: u64, out: *mut f64) -> PtmStatus {
    guard(|| {
        let v = unsafe { law_ref(law) }?.pmf(k).ffi()?;
        unsafe { write_out(out, v, "out") }
    })
}

/// Mean `c` and variance `δ²`.
///
/// # Safety
/// `law` must be a live handle; both out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ptm_law_moments(law: *const PtmCountingLaw, mean: *mut f64, variance: *mut f64) -> PtmStatus {
    guard(|| {
        let (c, d2) = unsafe { law_ref(law) }?.moments().ffi()?;
        unsafe { write_out(mean, c, "mean") }?;
        unsafe { write_out(variance, d2, "variance") }
    })
}

/// Law of the points kept under independent retention with probability `a`.
///
/// # Safety
/// `law` must be a live handle; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn ptm_law_thin(law: *const PtmCountingLaw, a: f64, out: *mut *mut PtmCountingLaw) -> PtmStatus {
    let thinned = match unsafe { law.as_ref() } {
        Some(l) => l.inner.thin_map(a),
        None => return guard(|| Err(null("law"))),
    };
    unsafe { new_law(out, thinned) }
}

/// Largest identity residual of the thinning relation over `n_grid` evenly
/// spaced points of `[0, 1]`.
///
/// # Safety
/// `law` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ptm_bone_residual(law: *const PtmCountingLaw, a: f64, n_grid: usize, out: *mut f64) -> PtmStatus {
    guard(|| {
        let law = unsafe { law_ref(law) }?;
        if n_grid < 2 {
            return Err((PtmStatus::InvalidParameter, "n_grid must be at least 2".into()));
        }
        let r = bone::bone_residual(law, a, &bone::uniform_grid(n_grid)).ffi()?;
        unsafe { write_out(out, r, "out") }
    })
}

/// Root of `1 - τ = e^{-R0(τ + ρ)}`.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ptm_sir_final_size(r0: f64, rho: f64, out: *mut f64) -> PtmStatus {
    guard(|| {
        let tau = ptm::sir::final_size(r0, rho).ffi()?;
        unsafe { write_out(out, tau, "out") }
    })
}

/// Runs an experiment from a JSON config and returns the canonical JSON
/// report. `passed` receives 1 when every check passed, else 0. Free the
/// report with [`ptm_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string; the out pointers must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ptm_run_config_json(config_json: *const c_char, report_json: *mut *mut c_char, passed: *mut i32) -> PtmStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let text = unsafe { CStr::from_ptr(config_json) }
            .to_str()
            .map_err(|e| (PtmStatus::InvalidUtf8, e.to_string()))?;
        let config = ExperimentConfig::from_json(text).ffi()?;
        let report = cli::run(&config).ffi()?;
        let json = cli::render(&report, Format::Json).ffi()?;
        let c = CString::new(json).map_err(|e| (PtmStatus::Numeric, e.to_string()))?;
        if !passed.is_null() {
            unsafe { passed.write(i32::from(report.passed)) };
        }
        unsafe { report_json.write(c.into_raw()) };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ptm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

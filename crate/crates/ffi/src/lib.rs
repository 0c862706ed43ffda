//! C interface to `geoassess`.
//!
//! Objects cross the boundary as opaque handles created by `ga_*_new`-style
//! functions and released with the matching `ga_*_free`. Every fallible
//! function returns a [`GaStatus`]; on failure the message is available
//! from [`ga_last_error_message`] on the same thread. Output pointers are
//! only written on success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use geoassess::covariance::{self, MaternSpec};
use geoassess::criteria::{self, EfficiencyReport, Method, ModelPair};
use geoassess::dataset::Dataset;
use geoassess::geometry::{gen_perturbed_grid, Location, LocationSet};
use geoassess::kriging;
use geoassess::likelihood::{self, Backend, FitConfig, Param, Termination};
use geoassess::simulation;
use geoassess::tlr::TlrConfig;
use geoassess::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaStatus {
    Ok = 0,
    InvalidArgument = 1,
    Domain = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    RankOverflow = 5,
    RankDeficient = 6,
    FitFailure = 7,
    Parse = 8,
    Io = 9,
    NullPointer = 10,
    Panic = 11,
}

/// Criteria estimator for `ga_assess`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaMethod {
    Plugin = 0,
    Stein = 1,
}

/// Likelihood backend for `ga_fit`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaBackend {
    Exact = 0,
    Tlr = 1,
}

/// Matérn parameters: partial sill, range, smoothness and nugget.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaMaternSpec {
    pub sigma2: f64,
    pub alpha: f64,
    pub nu: f64,
    pub nugget: f64,
}

/// Fit settings. `tlr_*` fields are read only for `GA_BACKEND_TLR`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaFitOptions {
    pub backend: GaBackend,
    pub nb: usize,
    pub tlr_max_rank: usize,
    pub tlr_acc: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    /// Nonzero holds ν at its initial value.
    pub fix_nu: i32,
    /// Nonzero holds the nugget at its initial value.
    pub fix_nugget: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaFitResult {
    pub theta_hat: GaMaternSpec,
    pub loglik: f64,
    pub evaluations: usize,
    /// Nonzero when the tolerance was met before `max_iter`.
    pub converged: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaSummary {
    pub mloe: f64,
    pub mmom: f64,
    pub rmom: f64,
    pub clamp_count: usize,
}

/// Observed locations and values.
pub struct GaDataset(Dataset);

/// Per-location criteria from `ga_assess`.
pub struct GaReport(EfficiencyReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GaStatus {
    match e {
        Error::InvalidArgument(_) => GaStatus::InvalidArgument,
        Error::Domain(_) => GaStatus::Domain,
        Error::DimensionMismatch { .. } => GaStatus::DimensionMismatch,
        Error::NotPositiveDefinite { .. } => GaStatus::NotPositiveDefinite,
        Error::RankOverflow { .. } => GaStatus::RankOverflow,
        Error::RankDeficient(_) => GaStatus::RankDeficient,
        Error::FitFailure(_) => GaStatus::FitFailure,
        Error::Parse(_) => GaStatus::Parse,
        Error::Io(_) => GaStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GaStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GaStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            GaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn write<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn locations(x: *const f64, y: *const f64, n: usize) -> Result<LocationSet, Fail> {
    let xs = slice(x, n, "x")?;
    let ys = slice(y, n, "y")?;
    Ok(LocationSet::explicit(xs.iter().zip(ys).map(|(&x, &y)| Location::new(x, y)).collect())?)
}

fn spec(s: &GaMaternSpec) -> Result<MaternSpec, Fail> {
    Ok(MaternSpec::with_nugget(s.sigma2, s.alpha, s.nu, s.nugget)?)
}

fn c_spec(s: &MaternSpec) -> GaMaternSpec {
    GaMaternSpec {
        sigma2: s.sigma2,
        alpha: s.alpha,
        nu: s.nu,
        nugget: s.nugget,
    }
}

/// Copies the message of the last failure on this thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length
/// excluding the terminator, or 0 when there is none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ga_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Matérn covariance at distance `h`.
///
/// # Safety
/// `s` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ga_matern_cov(h: f64, s: *const GaMaternSpec, out: *mut f64) -> GaStatus {
    guard(|| {
        let sp = spec(deref(s, "spec")?)?;
        if !(h >= 0.0) {
            return Err(Error::Domain(format!("distance must be >= 0, got {h}")).into());
        }
        write(out, covariance::matern_cov(h, &sp), "out")
    })
}

/// Range parameter `alpha` whose correlation is 0.05 at distance `h_eff`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ga_effective_range_to_alpha(h_eff: f64, nu: f64, out: *mut f64) -> GaStatus {
    guard(|| write(out, covariance::effective_range_to_alpha(h_eff, nu)?, "out"))
}

/// Builds a dataset from coordinate and value arrays of length `n`.
///
/// # Safety
/// The arrays must hold `n` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ga_dataset_new(
    x: *const f64,
    y: *const f64,
    z: *const f64,
    n: usize,
    out: *mut *mut GaDataset,
) -> GaStatus {
    guard(|| {
        let locs = locations(x, y, n)?;
        let values = slice(z, n, "z")?.to_vec();
        let d = Dataset::new(locs, values)?;
        write(out, Box::into_raw(Box::new(GaDataset(d))), "out")
    })
}

/// Simulates the field on an `n`-point perturbed grid. Locations use seed
/// `seed − 1` and values seed `seed`.
///
/// # Safety
/// `s` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ga_dataset_simulate(
    n: usize,
    s: *const GaMaternSpec,
    seed: u64,
    out: *mut *mut GaDataset,
) -> GaStatus {
    guard(|| {
        let sp = spec(deref(s, "spec")?)?;
        let locs = gen_perturbed_grid(n, seed.wrapping_sub(1))?;
        let d = simulation::simulate_gp(&locs, &sp, seed)?;
        write(out, Box::into_raw(Box::new(GaDataset(d))), "out")
    })
}

/// Number of observations, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ga_dataset_len(d: *const GaDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// Copies coordinates and values into arrays of length `n`, which must
/// equal the dataset length. Any of the arrays may be null to skip it.
///
/// # Safety
/// `d` must be a live handle; non-null arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ga_dataset_copy(d: *const GaDataset, x: *mut f64, y: *mut f64, z: *mut f64, n: usize) -> GaStatus {
    guard(|| {
        let d = &deref(d, "dataset")?.0;
        if n != d.len() {
            return Err(Error::DimensionMismatch { expected: d.len(), got: n }.into());
        }
        for (i, p) in d.locs.iter().enumerate() {
            if !x.is_null() {
                *x.add(i) = p.x;
            }
            if !y.is_null() {
                *y.add(i) = p.y;
            }
            if !z.is_null() {
                *z.add(i) = d.values[i];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ga_dataset_free(d: *mut GaDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Exact Gaussian log-likelihood.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ga_exact_loglik(d: *const GaDataset, s: *const GaMaternSpec, out: *mut f64) -> GaStatus {
    guard(|| {
        let v = likelihood::exact_loglik(&deref(d, "dataset")?.0, &spec(deref(s, "spec")?)?)?;
        write(out, v, "out")
    })
}

/// Tile low-rank log-likelihood.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ga_tlr_loglik(
    d: *const GaDataset,
    s: *const GaMaternSpec,
    nb: usize,
    tlr_max_rank: usize,
    tlr_acc: f64,
    out: *mut f64,
) -> GaStatus {
    guard(|| {
        let cfg = TlrConfig::new(nb, tlr_max_rank, tlr_acc)?;
        let v = likelihood::tlr_loglik(&deref(d, "dataset")?.0, &spec(deref(s, "spec")?)?, &cfg)?;
        write(out, v, "out")
    })
}

/// Maximum-likelihood fit from `init` with default bounds.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ga_fit(
    d: *const GaDataset,
    init: *const GaMaternSpec,
    opts: *const GaFitOptions,
    out: *mut GaFitResult,
) -> GaStatus {
    guard(|| {
        let data = &deref(d, "dataset")?.0;
        let o = deref(opts, "options")?;
        let mut cfg = FitConfig::exact(spec(deref(init, "init")?)?);
        cfg.fixed = Vec::new();
        if o.fix_nu != 0 {
            cfg.fixed.push(Param::Nu);
        }
        if o.fix_nugget != 0 {
            cfg.fixed.push(Param::Nugget);
        }
        cfg.opt_tol = o.opt_tol;
        cfg.max_iter = o.max_iter;
        if o.backend == GaBackend::Tlr {
            cfg.backend = Backend::Tlr(TlrConfig::new(o.nb, o.tlr_max_rank, o.tlr_acc)?);
        }
        let r = likelihood::fit_mle(data, &cfg)?;
        if r.termination == Termination::Failure {
            return Err(Error::FitFailure("every likelihood evaluation failed".into()).into());
        }
        write(
            out,
            GaFitResult {
                theta_hat: c_spec(&r.theta_hat),
                loglik: r.loglik,
                evaluations: r.evaluations,
                converged: (r.termination == Termination::Converged) as i32,
            },
            "out",
        )
    })
}

/// Simple kriging at `m` locations; `pred` and `mse` receive `m` values.
///
/// # Safety
/// Arrays must hold `m` values; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ga_krige(
    d: *const GaDataset,
    s: *const GaMaternSpec,
    px: *const f64,
    py: *const f64,
    m: usize,
    pred: *mut f64,
    mse: *mut f64,
) -> GaStatus {
    guard(|| {
        let preds = locations(px, py, m)?;
        let k = kriging::krige(&deref(d, "dataset")?.0, &preds, &spec(deref(s, "spec")?)?)?;
        slice_mut(pred, m, "pred")?.copy_from_slice(&k.pred);
        slice_mut(mse, m, "mse")?.copy_from_slice(&k.mse);
        Ok(())
    })
}

/// Prediction-efficiency criteria of `approx` against `truth` at `m`
/// prediction locations.
///
/// # Safety
/// Arrays must hold `m` values; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ga_assess(
    d: *const GaDataset,
    truth: *const GaMaternSpec,
    approx: *const GaMaternSpec,
    px: *const f64,
    py: *const f64,
    m: usize,
    method: GaMethod,
    out: *mut *mut GaReport,
) -> GaStatus {
    guard(|| {
        let pair = ModelPair {
            truth: spec(deref(truth, "truth")?)?,
            approx: spec(deref(approx, "approx")?)?,
        };
        let preds = locations(px, py, m)?;
        let method = match method {
            GaMethod::Plugin => Method::Plugin,
            GaMethod::Stein => Method::Stein,
        };
        let r = criteria::assess(&pair, &deref(d, "dataset")?.0, &preds, method)?;
        write(out, Box::into_raw(Box::new(GaReport(r))), "out")
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ga_report_summary(r: *const GaReport, out: *mut GaSummary) -> GaStatus {
    guard(|| {
        let r = &deref(r, "report")?.0;
        write(
            out,
            GaSummary {
                mloe: r.mloe,
                mmom: r.mmom,
                rmom: r.rmom,
                clamp_count: r.clamp_count,
            },
            "out",
        )
    })
}

/// Copies per-location LOE and MOM into arrays of length `m` (either may be
/// null).
///
/// # Safety
/// `r` must be a live handle; non-null arrays must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn ga_report_values(r: *const GaReport, loe: *mut f64, mom: *mut f64, m: usize) -> GaStatus {
    guard(|| {
        let r = &deref(r, "report")?.0;
        if m != r.loe.len() {
            return Err(Error::DimensionMismatch { expected: r.loe.len(), got: m }.into());
        }
        if !loe.is_null() {
            slice_mut(loe, m, "loe")?.copy_from_slice(&r.loe);
        }
        if !mom.is_null() {
            slice_mut(mom, m, "mom")?.copy_from_slice(&r.mom);
        }
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ga_report_free(r: *mut GaReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Conditional K-L divergence of the approximate predictive distribution
/// from the true one at `m` locations.
///
/// # Safety
/// Arrays must hold `m` values; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ga_kl_divergence(
    d: *const GaDataset,
    truth: *const GaMaternSpec,
    approx: *const GaMaternSpec,
    px: *const f64,
    py: *const f64,
    m: usize,
    out: *mut f64,
) -> GaStatus {
    guard(|| {
        let pair = ModelPair {
            truth: spec(deref(truth, "truth")?)?,
            approx: spec(deref(approx, "approx")?)?,
        };
        let preds = locations(px, py, m)?;
        write(out, criteria::kl_conditional(&pair, &deref(d, "dataset")?.0, &preds)?, "out")
    })
}

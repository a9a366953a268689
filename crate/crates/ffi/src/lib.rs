//! C interface to `hdb-core`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every function returns an [`HdbStatus`];
//! on failure [`hdb_last_error`] describes the most recent error on the
//! calling thread. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hdb_core::closedform;
use hdb_core::mcbounds::{
    self, BoundsConfig, BoundsReport, CandidateSpec, EvalPoint, LowerMethod, Sampling,
};
use hdb_core::model::{HestonParams, UtilitySpec};
use hdb_core::simulate::{ControlFamily, DualControl};
use hdb_core::HdbError;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdbStatus {
    Ok = 0,
    /// A pointer argument was null.
    NullPointer = 1,
    /// An argument failed validation.
    InvalidArgument = 2,
    /// The request has no implementation for this model or utility.
    Unsupported = 3,
    /// A numerical routine failed.
    Numerical = 4,
    /// Internal panic; the handle involved should be freed.
    Panic = 5,
}

/// Dual control families `c`, `c sqrt(v)` and `c v`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdbFamily {
    Constant = 0,
    TimesSqrtV = 1,
    TimesV = 2,
}

impl From<HdbFamily> for ControlFamily {
    fn from(f: HdbFamily) -> Self {
        match f {
            HdbFamily::Constant => ControlFamily::Constant,
            HdbFamily::TimesSqrtV => ControlFamily::TimesSqrtV,
            HdbFamily::TimesV => ControlFamily::TimesV,
        }
    }
}

/// One candidate's bounds. Missing values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdbRow {
    pub lb: f64,
    pub lb_se: f64,
    pub ub: f64,
    pub ub_se: f64,
    /// Number of coefficients; see `hdb_report_coefficients`.
    pub pieces: usize,
    /// Nonzero when this candidate failed.
    pub failed: i32,
}

/// Model, utility, evaluation point and numerical settings.
pub struct HdbModel {
    params: HestonParams,
    utility: UtilitySpec,
    point: EvalPoint,
    config: BoundsConfig,
}

/// Result of a candidate search.
pub struct HdbReport {
    report: BoundsReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &HdbError) -> HdbStatus {
    match e {
        HdbError::InvalidParameter { .. } | HdbError::Config(_) => HdbStatus::InvalidArgument,
        HdbError::Unsupported(_) => HdbStatus::Unsupported,
        _ => HdbStatus::Numerical,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), HdbError>) -> HdbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdbStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HdbStatus::Panic
        }
    }
}

macro_rules! deref {
    ($p:expr, $name:literal) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => {
                set_error(format!("null pointer: {}", $name));
                return HdbStatus::NullPointer;
            }
        }
    };
}

macro_rules! deref_mut {
    ($p:expr, $name:literal) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => {
                set_error(format!("null pointer: {}", $name));
                return HdbStatus::NullPointer;
            }
        }
    };
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hdb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a model with power utility `p = 1/2`, state `(t, x, v) = (0, 1, 0.5)`,
/// horizon 1 and default simulation settings.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_new(
    r: f64,
    rho: f64,
    kappa: f64,
    theta: f64,
    xi: f64,
    market_price: f64,
    out: *mut *mut HdbModel,
) -> HdbStatus {
    let out = deref_mut!(out, "out");
    *out = ptr::null_mut();
    guard(|| {
        let params = HestonParams::new(r, rho, kappa, theta, xi, market_price)?;
        let model = HdbModel {
            params,
            utility: UtilitySpec::Power { p: 0.5 },
            point: EvalPoint::new(0.0, 1.0, 0.5, 1.0)?,
            config: BoundsConfig::default(),
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`hdb_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_free(model: *mut HdbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// `x^p / p`.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_set_power(model: *mut HdbModel, p: f64) -> HdbStatus {
    let m = deref_mut!(model, "model");
    guard(|| {
        m.utility = UtilitySpec::power(p)?;
        Ok(())
    })
}

/// The non-HARA utility.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_set_nonhara(model: *mut HdbModel) -> HdbStatus {
    let m = deref_mut!(model, "model");
    m.utility = UtilitySpec::NonHara;
    HdbStatus::Ok
}

/// `min(x, cap)`.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_set_yaari(model: *mut HdbModel, cap: f64) -> HdbStatus {
    let m = deref_mut!(model, "model");
    guard(|| {
        m.utility = UtilitySpec::yaari(cap)?;
        Ok(())
    })
}

/// Evaluation time, wealth, variance and horizon.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_set_state(
    model: *mut HdbModel,
    t: f64,
    x: f64,
    v: f64,
    horizon: f64,
) -> HdbStatus {
    let m = deref_mut!(model, "model");
    guard(|| {
        m.point = EvalPoint::new(t, x, v, horizon)?;
        Ok(())
    })
}

/// Paths, steps and seed of every simulation; `antithetic` nonzero pairs paths.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_set_simulation(
    model: *mut HdbModel,
    paths: usize,
    steps: usize,
    seed: u64,
    antithetic: i32,
) -> HdbStatus {
    let m = deref_mut!(model, "model");
    guard(|| {
        let mut sim = m.config.sim;
        sim.num_paths = paths;
        sim.num_steps = steps;
        sim.seed = seed;
        sim.antithetic = antithetic != 0;
        sim.validate()?;
        m.config.sim = sim;
        Ok(())
    })
}

/// Lower bound by simulation even where a closed form exists.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hdb_model_force_mc_lower(model: *mut HdbModel, enable: i32) -> HdbStatus {
    let m = deref_mut!(model, "model");
    m.config.lower = if enable != 0 {
        LowerMethod::MonteCarlo
    } else {
        LowerMethod::Auto
    };
    HdbStatus::Ok
}

/// Closed-form benchmark for the model's utility.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hdb_benchmark(model: *const HdbModel, out: *mut f64) -> HdbStatus {
    let m = deref!(model, "model");
    let out = deref_mut!(out, "out");
    guard(|| {
        let pt = &m.point;
        let b = match m.utility {
            UtilitySpec::Power { p } => {
                closedform::power_benchmark(&m.params, p, pt.t, pt.x, pt.v, pt.horizon)?
                    .as_benchmark()
            }
            UtilitySpec::NonHara => {
                closedform::nonhara_constvol_benchmark(&m.params, pt.v, pt.t, pt.x, pt.horizon)?
            }
            UtilitySpec::Yaari { cap } => {
                closedform::yaari_constvol_benchmark(&m.params, cap, pt.v, pt.t, pt.x, pt.horizon)?
            }
        };
        *out = b.value;
        Ok(())
    })
}

/// Bounds for one piecewise-constant control with `n` equal pieces.
/// Outputs may be null when not wanted.
///
/// # Safety
/// `model` must be a live handle, `coefficients` must point to `n` values,
/// and each non-null output must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdb_bounds(
    model: *const HdbModel,
    family: HdbFamily,
    coefficients: *const f64,
    n: usize,
    lb: *mut f64,
    lb_se: *mut f64,
    ub: *mut f64,
    ub_se: *mut f64,
) -> HdbStatus {
    let m = deref!(model, "model");
    if coefficients.is_null() || n == 0 {
        set_error("coefficients must be a non-empty array".into());
        return HdbStatus::NullPointer;
    }
    let coeffs = std::slice::from_raw_parts(coefficients, n).to_vec();
    guard(|| {
        let control = DualControl::uniform(family.into(), coeffs, m.point.t, m.point.horizon)?;
        let u = mcbounds::upper_bound(&m.params, &control, &m.utility, &m.point, &m.config)?;
        let l = mcbounds::lower_bound(&m.params, &control, &m.utility, &m.point, &m.config)?;
        for (p, v) in [(lb, l.value), (lb_se, l.se), (ub, u.value), (ub_se, u.se)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Bounds over `count` grid values per piece on `[lo, hi]` with `pieces`
/// pieces (Cartesian product).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hdb_optimize(
    model: *const HdbModel,
    family: HdbFamily,
    count: usize,
    lo: f64,
    hi: f64,
    pieces: usize,
    out: *mut *mut HdbReport,
) -> HdbStatus {
    let m = deref!(model, "model");
    let out = deref_mut!(out, "out");
    *out = ptr::null_mut();
    guard(|| {
        let spec = CandidateSpec {
            count,
            lo,
            hi,
            pieces,
            sampling: Sampling::Grid,
        };
        let cands = spec.candidates()?;
        let report = mcbounds::optimize_controls(
            &m.params,
            &m.utility,
            family.into(),
            &cands,
            &m.point,
            &m.config,
        )?;
        *out = Box::into_raw(Box::new(HdbReport { report }));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle from [`hdb_optimize`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hdb_report_free(report: *mut HdbReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of candidates.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hdb_report_len(report: *const HdbReport, out: *mut usize) -> HdbStatus {
    let r = deref!(report, "report");
    let out = deref_mut!(out, "out");
    *out = r.report.rows.len();
    HdbStatus::Ok
}

/// Row `index`.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hdb_report_row(
    report: *const HdbReport,
    index: usize,
    out: *mut HdbRow,
) -> HdbStatus {
    let r = deref!(report, "report");
    let out = deref_mut!(out, "out");
    guard(|| {
        let row = r
            .report
            .rows
            .get(index)
            .ok_or_else(|| HdbError::Config(format!("row {index} out of range")))?;
        *out = HdbRow {
            lb: row.lb.map_or(f64::NAN, |b| b.value),
            lb_se: row.lb.map_or(f64::NAN, |b| b.se),
            ub: row.ub.map_or(f64::NAN, |b| b.value),
            ub_se: row.ub.map_or(f64::NAN, |b| b.se),
            pieces: row.coefficients.len(),
            failed: row.error.is_some() as i32,
        };
        Ok(())
    })
}

/// Copies up to `capacity` coefficients of row `index` into `buf`.
///
/// # Safety
/// `report` must be a live handle and `buf` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn hdb_report_coefficients(
    report: *const HdbReport,
    index: usize,
    buf: *mut f64,
    capacity: usize,
) -> HdbStatus {
    let r = deref!(report, "report");
    if buf.is_null() && capacity > 0 {
        set_error("null pointer: buf".into());
        return HdbStatus::NullPointer;
    }
    guard(|| {
        let row = r
            .report
            .rows
            .get(index)
            .ok_or_else(|| HdbError::Config(format!("row {index} out of range")))?;
        let n = row.coefficients.len().min(capacity);
        if n > 0 {
            std::slice::from_raw_parts_mut(buf, n).copy_from_slice(&row.coefficients[..n]);
        }
        Ok(())
    })
}

/// Largest lower bound and smallest upper bound with their row indices.
/// Outputs may be null when not wanted; a missing bound is NaN with index
/// `SIZE_MAX`.
///
/// # Safety
/// `report` must be a live handle and each non-null output writable.
#[no_mangle]
pub unsafe extern "C" fn hdb_report_tight(
    report: *const HdbReport,
    lb: *mut f64,
    lb_index: *mut usize,
    ub: *mut f64,
    ub_index: *mut usize,
) -> HdbStatus {
    let r = deref!(report, "report");
    let rep = &r.report;
    if let Some(p) = lb.as_mut() {
        *p = rep.tight_lb().map_or(f64::NAN, |b| b.value);
    }
    if let Some(p) = lb_index.as_mut() {
        *p = rep.best_lb.unwrap_or(usize::MAX);
    }
    if let Some(p) = ub.as_mut() {
        *p = rep.tight_ub().map_or(f64::NAN, |b| b.value);
    }
    if let Some(p) = ub_index.as_mut() {
        *p = rep.best_ub.unwrap_or(usize::MAX);
    }
    HdbStatus::Ok
}

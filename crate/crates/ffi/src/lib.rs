//! C ABI over the heatrisk library.
//!
//! Models are loaded from the JSON artifacts the pipeline writes and are
//! handed out as opaque pointers. Every fallible function returns an
//! [`HrStatus`]; on failure the message is available from
//! [`hr_last_error_message`] on the same thread until the next call fails.
//! Results are written through out-pointers only on success.

// `!(x > 0.0)` style guards deliberately treat NaN as invalid
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use heatrisk::datastore::TimeCovariates;
use heatrisk::dependence::{br_chi, DependenceModel};
use heatrisk::io::read_json;
use heatrisk::margins::{LocalMargin, MarginalModel};
use heatrisk::risk::{marginal_return_level, prob_event};
use heatrisk::simulator::{simulate_profiles, SimBatch, SimOptions};
use heatrisk::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    OutOfRange = 6,
    Panic = 99,
}

/// Fitted marginal model (body, tail and site covariates).
pub struct HrMarginalModel(MarginalModel);

/// Fitted dependence model.
pub struct HrDependenceModel(DependenceModel);

/// Batch of simulated r-Pareto profiles.
pub struct HrSimBatch(SimBatch);

/// Time covariates for evaluating a margin.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HrTimeCovariates {
    pub m_i: f64,
    pub m_g: f64,
    pub co2: f64,
}

/// Event probability with Monte Carlo standard errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HrEventEstimate {
    pub prob: f64,
    pub prob_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub coverage_given_event: f64,
    pub coverage_given_event_se: f64,
    pub b: f64,
    pub scale: f64,
    /// 1 when the unscaled estimator was used.
    pub fallback: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HrStatus {
    match e {
        Error::Io { .. } | Error::MissingArtifact { .. } => HrStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::Schema(_) => HrStatus::Parse,
        Error::NonConvergence { .. }
        | Error::Collinear { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::CrossingQuantiles { .. } => HrStatus::Numerical,
        Error::BelowThreshold { .. } | Error::EndpointViolation { .. } => HrStatus::OutOfRange,
        _ => HrStatus::InvalidInput,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Range(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HrStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HrStatus::NullPointer
        }
        Ok(Err(Failure::Range(msg))) => {
            set_error(msg);
            HrStatus::OutOfRange
        }
        Ok(Err(Failure::Lib(e))) => {
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
            HrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure::Lib(Error::InvalidInput("path is not valid UTF-8".into())))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Last error message on this thread, or null if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Clear the last error message on this thread.
#[no_mangle]
pub extern "C" fn hr_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn hr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// -- marginal model ---------------------------------------------------------

/// Load a marginal model from `fit-tail/marginal.json`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_marginal_load(path: *const c_char, out_model: *mut *mut HrMarginalModel) -> HrStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_model, "out_model")?;
        let model: MarginalModel = read_json(path)?;
        *slot = Box::into_raw(Box::new(HrMarginalModel(model)));
        Ok(())
    })
}

/// Release a marginal model. Null is ignored.
///
/// # Safety
/// `model` must come from [`hr_marginal_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_marginal_free(model: *mut HrMarginalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of stations in the model (0 for null).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_marginal_n_stations(model: *const HrMarginalModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.stations.len())
}

unsafe fn local(model: *const HrMarginalModel, station: usize, time: HrTimeCovariates) -> Result<LocalMargin, Failure> {
    let m = &deref(model, "model")?.0;
    let site = m
        .stations
        .get(station)
        .ok_or_else(|| Failure::Range(format!("station index {station} out of range ({} stations)", m.stations.len())))?;
    let tc = TimeCovariates {
        m_i: time.m_i,
        m_g: time.m_g,
        co2: time.co2,
    };
    Ok(m.at(site, &tc)?)
}

/// Distribution function of the station margin at temperature `x`.
///
/// # Safety
/// `model` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_marginal_cdf(
    model: *const HrMarginalModel,
    station: usize,
    time: HrTimeCovariates,
    x: f64,
    out_value: *mut f64,
) -> HrStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        *slot = local(model, station, time)?.cdf(x);
        Ok(())
    })
}

/// Quantile of the station margin at probability `p` in (0, 1).
///
/// # Safety
/// `model` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_marginal_quantile(
    model: *const HrMarginalModel,
    station: usize,
    time: HrTimeCovariates,
    p: f64,
    out_value: *mut f64,
) -> HrStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Failure::Range(format!("probability {p} outside (0, 1)")));
        }
        *slot = local(model, station, time)?.quantile(p);
        Ok(())
    })
}

/// Return level for a period in years (92 summer days per year).
///
/// # Safety
/// `model` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_marginal_return_level(
    model: *const HrMarginalModel,
    station: usize,
    time: HrTimeCovariates,
    period_years: f64,
    out_value: *mut f64,
) -> HrStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        *slot = marginal_return_level(&local(model, station, time)?, period_years)?;
        Ok(())
    })
}

/// Pareto-scale thresholds for a common temperature at the given stations.
///
/// # Safety
/// `stations` must hold `n` indices and `out_thresholds` room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn hr_marginal_pareto_thresholds(
    model: *const HrMarginalModel,
    stations: *const usize,
    n: usize,
    time: HrTimeCovariates,
    temp: f64,
    out_thresholds: *mut f64,
) -> HrStatus {
    guard(|| {
        let idx = slice(stations, n, "stations")?;
        if n > 0 && out_thresholds.is_null() {
            return Err(Failure::Null("out_thresholds"));
        }
        let margins: Vec<LocalMargin> = idx.iter().map(|&s| local(model, s, time)).collect::<Result<_, _>>()?;
        let tp = heatrisk::risk::threshold_on_pareto(temp, &margins)?;
        std::slice::from_raw_parts_mut(out_thresholds, n).copy_from_slice(&tp);
        Ok(())
    })
}

// -- dependence model -------------------------------------------------------

/// Load a dependence model from `fit-dep/dependence.json`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_dependence_load(
    path: *const c_char,
    out_model: *mut *mut HrDependenceModel,
) -> HrStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_model, "out_model")?;
        let model: DependenceModel = read_json(path)?;
        *slot = Box::into_raw(Box::new(HrDependenceModel(model)));
        Ok(())
    })
}

/// Build a dependence model from variogram parameters and a risk threshold.
///
/// # Safety
/// `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_dependence_new(
    alpha: f64,
    phi: f64,
    nu: f64,
    v_r: f64,
    out_model: *mut *mut HrDependenceModel,
) -> HrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let model = DependenceModel::from_variogram(heatrisk::dependence::VariogramParams::new(alpha, phi, nu), v_r)?;
        *slot = Box::into_raw(Box::new(HrDependenceModel(model)));
        Ok(())
    })
}

/// Release a dependence model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_dependence_free(model: *mut HrDependenceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Risk threshold v_r of the model.
///
/// # Safety
/// `model` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_dependence_risk_threshold(model: *const HrDependenceModel, out_value: *mut f64) -> HrStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        *slot = deref(model, "model")?.0.v_r;
        Ok(())
    })
}

/// Extremal coefficient χ(h) of the model at distance `h_km` and
/// temperature anomaly `m_i` (used only when the sill varies in time).
///
/// # Safety
/// `model` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_dependence_chi(
    model: *const HrDependenceModel,
    h_km: f64,
    m_i: f64,
    out_value: *mut f64,
) -> HrStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        if !(h_km >= 0.0) {
            return Err(Failure::Range(format!("distance {h_km} must be non-negative")));
        }
        *slot = br_chi(h_km, &deref(model, "model")?.0.vario_at(m_i));
        Ok(())
    })
}

// -- simulation and risk ----------------------------------------------------

/// Simulate `m` profiles at `n_sites` sites with planar coordinates in km
/// (`coords` holds x0, y0, x1, y1, ...). `reference` < 0 picks the site
/// nearest the centroid.
///
/// # Safety
/// `coords` must hold `2 * n_sites` values and `out_batch` be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_simulate(
    model: *const HrDependenceModel,
    coords: *const f64,
    n_sites: usize,
    m_i: f64,
    m: usize,
    l: usize,
    seed: u64,
    reference: i64,
    out_batch: *mut *mut HrSimBatch,
) -> HrStatus {
    guard(|| {
        let dep = &deref(model, "model")?.0;
        let xy = slice(coords, 2 * n_sites, "coords")?;
        let slot = out(out_batch, "out_batch")?;
        let coords: Vec<[f64; 2]> = xy.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let ids: Vec<String> = (0..n_sites).map(|i| format!("s{i}")).collect();
        let reference = if reference < 0 {
            None
        } else {
            Some(reference as usize)
        };
        let opts = SimOptions { m, l, seed, reference };
        let batch = simulate_profiles(&dep.vario_at(m_i), &ids, &coords, &opts)?;
        *slot = Box::into_raw(Box::new(HrSimBatch(batch)));
        Ok(())
    })
}

/// Release a simulated batch. Null is ignored.
///
/// # Safety
/// `batch` must come from [`hr_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_batch_free(batch: *mut HrSimBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// Number of sites in a batch (0 for null).
///
/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_batch_n_sites(batch: *const HrSimBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.n_sites())
}

/// Number of profiles in a batch (0 for null).
///
/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_batch_n_profiles(batch: *const HrSimBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.m)
}

/// Probability that a Pareto-scale field exceeds `thresholds` somewhere
/// (one threshold per batch site), with coverage summaries.
///
/// # Safety
/// `thresholds` must hold `n` values and `out_estimate` be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_prob_event(
    batch: *const HrSimBatch,
    thresholds: *const f64,
    n: usize,
    v_r: f64,
    out_estimate: *mut HrEventEstimate,
) -> HrStatus {
    guard(|| {
        let b = &deref(batch, "batch")?.0;
        let tp = slice(thresholds, n, "thresholds")?;
        let slot = out(out_estimate, "out_estimate")?;
        if n != b.n_sites() {
            return Err(Failure::Range(format!("{n} thresholds for a batch of {} sites", b.n_sites())));
        }
        let e = prob_event(b, tp, v_r)?;
        *slot = HrEventEstimate {
            prob: e.prob.value,
            prob_se: e.prob.se,
            coverage: e.coverage.value,
            coverage_se: e.coverage.se,
            coverage_given_event: e.coverage_given_event.value,
            coverage_given_event_se: e.coverage_given_event.se,
            b: e.b,
            scale: e.scale,
            fallback: i32::from(e.fallback),
        };
        Ok(())
    })
}

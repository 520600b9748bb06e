//! Threshold exceedances: fixed-in-time thresholds, exceedance rates λ(t,s),
//! the climate-grid GPD (per-site scale, shared shape) and the observational
//! GPD with covariate log-scale models M0–M2.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{fit_ald_design, AldFit, BodyCdf, Design};
use crate::covariates::{SiteCovariates, THRESHOLD_TAU};
use crate::datastore::{ClimateGrid, StationPanel, TimeCovariates};
use crate::error::{Error, Result};
use crate::numeric::brent_bounded;

const XI_ZERO: f64 = 1e-10;
pub const XI_MIN: f64 = -0.9;
pub const XI_MAX: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Self {
        Self { sigma, xi }
    }

    /// Finite upper endpoint of the excess distribution when ξ < 0.
    pub fn endpoint(&self) -> Option<f64> {
        (self.xi < 0.0).then(|| self.sigma / -self.xi)
    }
}

/// GPD distribution function of an excess `y ≥ 0`.
pub fn gpd_cdf(y: f64, p: GpdParams) -> f64 {
    1.0 - gpd_survival(y, p)
}

pub fn gpd_survival(y: f64, p: GpdParams) -> f64 {
    if y <= 0.0 {
        return 1.0;
    }
    let z = y / p.sigma;
    if p.xi.abs() < XI_ZERO {
        return (-z).exp();
    }
    let a = 1.0 + p.xi * z;
    if a <= 0.0 {
        0.0
    } else {
        (-a.ln() / p.xi).exp()
    }
}

/// Excess with exceedance probability `surv` (i.e. H(y) = 1 − surv).
pub fn gpd_survival_inverse(surv: f64, p: GpdParams) -> f64 {
    if surv >= 1.0 {
        return 0.0;
    }
    if surv <= 0.0 {
        return p.endpoint().unwrap_or(f64::INFINITY);
    }
    if p.xi.abs() < XI_ZERO {
        -p.sigma * surv.ln()
    } else {
        p.sigma / p.xi * ((-p.xi * surv.ln()).exp() - 1.0)
    }
}

/// Log density of an excess; −∞ outside the support.
pub fn gpd_logpdf(y: f64, p: GpdParams) -> f64 {
    if y < 0.0 || p.sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = y / p.sigma;
    if p.xi.abs() < XI_ZERO {
        return -p.sigma.ln() - z;
    }
    let a = 1.0 + p.xi * z;
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -p.sigma.ln() - (1.0 + 1.0 / p.xi) * (p.xi * z).ln_1p()
}

/// Constant-in-time threshold u(s) = β0 + β1 u_c(s), fitted as the τ = 0.9
/// ALD regression of station values on the climate 0.9-quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdField {
    pub beta0: f64,
    pub beta1: f64,
    pub fit: AldFit,
}

impl ThresholdField {
    pub fn at(&self, u_c: f64) -> f64 {
        self.beta0 + self.beta1 * u_c
    }
}

pub fn fit_threshold(panel: &StationPanel, sites: &[SiteCovariates]) -> Result<ThresholdField> {
    let mut d = Design::new(2);
    for (_, s, y) in panel.observed_entries() {
        d.push(y, &[1.0, sites[s].u_c]);
    }
    let fit = fit_ald_design(&d, THRESHOLD_TAU, vec!["1".into(), "u_c".into()])?;
    Ok(ThresholdField {
        beta0: fit.betas[0],
        beta1: fit.betas[1],
        fit,
    })
}

pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 0.5;

/// Exceedance probability λ = 1 − F_body(u). Returns the (possibly
/// clamped) value and whether clamping occurred.
pub fn exceedance_rate(body: &BodyCdf, u: f64) -> (f64, bool) {
    let lambda = 1.0 - body.cdf(u);
    if lambda < LAMBDA_MIN {
        (LAMBDA_MIN, true)
    } else if lambda > LAMBDA_MAX {
        (LAMBDA_MAX, true)
    } else {
        (lambda, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClimFitOptions {
    pub xi_tol: f64,
    pub rel_pl_tol: f64,
    pub max_sweeps: usize,
    pub min_excesses: usize,
}

impl Default for ClimFitOptions {
    fn default() -> Self {
        Self {
            xi_tol: 1e-6,
            rel_pl_tol: 1e-9,
            max_sweeps: 200,
            min_excesses: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimTailFit {
    pub sigma_c: Vec<f64>,
    pub xi_c: f64,
    pub loglik: f64,
    pub sweeps: usize,
    /// Pseudo-log-likelihood after each sweep.
    pub trace: Vec<f64>,
}

/// Excesses above `u_c(s)` at every grid site.
pub fn clim_excesses(grid: &ClimateGrid, u_c: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.n_sites())
        .map(|s| {
            grid.series(s)
                .into_iter()
                .filter(|&x| x > u_c[s])
                .map(|x| x - u_c[s])
                .collect()
        })
        .collect()
}

fn site_loglik(excesses: &[f64], p: GpdParams) -> f64 {
    excesses.iter().map(|&y| gpd_logpdf(y, p)).sum()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn update_sigma(excesses: &[f64], ymax: f64, xi: f64, current: f64) -> f64 {
    let mean = excesses.iter().sum::<f64>() / excesses.len() as f64;
    let floor = if xi < 0.0 { -xi * ymax * (1.0 + 1e-12) } else { 0.0 };
    let lo = floor.max(1e-6 * mean).max(1e-12).ln();
    let hi = (current.max(mean) * 50.0).ln();
    let res = brent_bounded(
        |ls| -site_loglik(excesses, GpdParams::new(ls.exp(), xi)),
        lo,
        hi,
        1e-11,
    );
    res.x.exp()
}

/// Climate-grid GPD with per-site scales and a shared shape, fitted by
/// alternating one-dimensional maximizations of the pseudo-log-likelihood.
pub fn fit_clim_gpd(excesses: &[Vec<f64>], opts: &ClimFitOptions) -> Result<ClimTailFit> {
    if excesses.is_empty() {
        return Err(Error::InvalidInput("no grid sites for the climate tail".into()));
    }
    for (s, e) in excesses.iter().enumerate() {
        if e.len() < opts.min_excesses {
            return Err(Error::InvalidInput(format!(
                "grid site {s} has {} excesses, need at least {}",
                e.len(),
                opts.min_excesses
            )));
        }
    }
    let ymax: Vec<f64> = excesses.iter().map(|e| max_of(e)).collect();
    // start from the exponential fit
    let mut sigma: Vec<f64> = excesses
        .iter()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect();
    let mut xi = 0.0;
    let total = |sigma: &[f64], xi: f64| -> f64 {
        excesses
            .iter()
            .zip(sigma)
            .map(|(e, &s)| site_loglik(e, GpdParams::new(s, xi)))
            .sum()
    };
    let mut pl = total(&sigma, xi);
    let mut trace = Vec::new();
    for sweep in 1..=opts.max_sweeps {
        // shape step with all scales fixed
        let lo = sigma
            .iter()
            .zip(&ymax)
            .map(|(s, m)| -s / m * (1.0 - 1e-12))
            .fold(XI_MIN, f64::max);
        let res = brent_bounded(|x| -total(&sigma, x), lo, XI_MAX, 1e-12);
        let xi_new = if -res.fx >= pl { res.x } else { xi };
        // scale steps with the shape fixed
        sigma = excesses
            .par_iter()
            .zip(&ymax)
            .zip(&sigma)
            .map(|((e, &m), &s)| update_sigma(e, m, xi_new, s))
            .collect();
        let pl_new = total(&sigma, xi_new);
        trace.push(pl_new);
        let dxi = (xi_new - xi).abs();
        let dpl = ((pl_new - pl) / pl.abs().max(1e-300)).abs();
        xi = xi_new;
        pl = pl_new;
        if dxi < opts.xi_tol && dpl < opts.rel_pl_tol {
            return Ok(ClimTailFit {
                sigma_c: sigma,
                xi_c: xi,
                loglik: pl,
                sweeps: sweep,
                trace,
            });
        }
    }
    let mut last = sigma;
    last.push(xi);
    Err(Error::NonConvergence {
        iterations: opts.max_sweeps,
        last,
        grad_norm: f64::NAN,
    })
}

/// Covariate structures for the observational log-scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TailModelId {
    M0,
    M1,
    M2,
}

impl std::str::FromStr for TailModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M0" | "m0" => Ok(TailModelId::M0),
            "M1" | "m1" => Ok(TailModelId::M1),
            "M2" | "m2" => Ok(TailModelId::M2),
            _ => Err(Error::InvalidInput(format!("unknown tail model `{s}`"))),
        }
    }
}

impl std::fmt::Display for TailModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// How the climate scale enters M2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClimScaleLink {
    #[default]
    Log,
    Identity,
}

impl std::str::FromStr for ClimScaleLink {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(ClimScaleLink::Log),
            "identity" => Ok(ClimScaleLink::Identity),
            _ => Err(Error::InvalidInput(format!("unknown clim_scale_link `{s}`"))),
        }
    }
}

/// Covariates entering log σ_o at one (t, s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleCovariates {
    pub sigma_c: f64,
    pub coast_dist: f64,
    pub m_i: f64,
}

impl TailModelId {
    pub fn covariate_spec(self, link: ClimScaleLink) -> Vec<String> {
        let clim = match link {
            ClimScaleLink::Log => "ln_sigma_c",
            ClimScaleLink::Identity => "sigma_c",
        };
        let names: Vec<&str> = match self {
            TailModelId::M0 => vec!["1", "ln_sigma_c"],
            TailModelId::M1 => vec!["1", "ln_sigma_c", "M_I"],
            TailModelId::M2 => vec!["1", clim, "ln_C", "M_I", "ln_C:M_I"],
        };
        names.into_iter().map(String::from).collect()
    }

    pub fn design_row(self, link: ClimScaleLink, c: ScaleCovariates) -> Vec<f64> {
        let ls = c.sigma_c.ln();
        match self {
            TailModelId::M0 => vec![1.0, ls],
            TailModelId::M1 => vec![1.0, ls, c.m_i],
            TailModelId::M2 => {
                let clim = match link {
                    ClimScaleLink::Log => ls,
                    ClimScaleLink::Identity => c.sigma_c,
                };
                let lc = c.coast_dist.ln();
                vec![1.0, clim, lc, c.m_i, lc * c.m_i]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsTailFit {
    pub model_id: TailModelId,
    pub clim_scale_link: ClimScaleLink,
    pub theta: Vec<f64>,
    pub xi_o: f64,
    pub covariate_spec: Vec<String>,
    pub loglik: f64,
    pub n_excesses: usize,
}

impl ObsTailFit {
    pub fn sigma(&self, c: ScaleCovariates) -> f64 {
        let row = self.model_id.design_row(self.clim_scale_link, c);
        row.iter().zip(&self.theta).map(|(a, b)| a * b).sum::<f64>().exp()
    }

    pub fn params(&self, c: ScaleCovariates) -> GpdParams {
        GpdParams::new(self.sigma(c), self.xi_o)
    }
}

/// Options for the log-scale regression GPD fit.
#[derive(Debug, Clone, Default)]
pub struct GpdRegressionOptions {
    /// Fix ξ at this value.
    pub fixed_xi: Option<f64>,
    /// Per-coefficient fixed values (None = free).
    pub fixed_theta: Vec<Option<f64>>,
    /// Starting point (θ, ξ).
    pub start: Option<(Vec<f64>, f64)>,
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GpdRegressionFit {
    pub theta: Vec<f64>,
    pub xi: f64,
    pub loglik: f64,
    pub iterations: usize,
}

const COLLINEAR_LIMIT: f64 = 1e8;

/// Condition number of a design matrix (ratio of extreme singular values).
pub fn condition_number(design: &Design) -> f64 {
    let p = design.p;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    for i in 0..design.len() {
        let r = design.row(i);
        for a in 0..p {
            for b in 0..p {
                xtx[(a, b)] += r[a] * r[b];
            }
        }
    }
    let eig = xtx.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).sqrt()
    }
}

// Per-observation log-likelihood and derivatives with respect to η = log σ
// and ξ. Returns None outside the support.
#[inline]
fn obs_terms(y: f64, eta: f64, xi: f64) -> Option<[f64; 6]> {
    let u = y * (-eta).exp();
    let a = 1.0 + xi * u;
    if a <= 0.0 {
        return None;
    }
    let l_eta = -1.0 + (1.0 + xi) * u / a;
    let l_ee = -(1.0 + xi) * u / (a * a);
    let l_ex = u * (1.0 - u) / (a * a);
    let (ll, l_x, l_xx);
    if xi.abs() < 1e-4 {
        let (u2, u3, u4) = (u * u, u * u * u, u * u * u * u);
        let log_a = (xi * u).ln_1p();
        ll = if xi.abs() < 1e-12 { -eta - u } else { -eta - (1.0 + 1.0 / xi) * log_a };
        l_x = -u + 0.5 * u2 + xi * (u2 - 2.0 * u3 / 3.0) + xi * xi * (0.75 * u4 - u3);
        l_xx = (u2 - 2.0 * u3 / 3.0) + 2.0 * xi * (0.75 * u4 - u3);
    } else {
        let log_a = (xi * u).ln_1p();
        ll = -eta - (1.0 + 1.0 / xi) * log_a;
        l_x = log_a / (xi * xi) - (1.0 + 1.0 / xi) * u / a;
        l_xx = -2.0 * log_a / (xi * xi * xi) + 2.0 * u / (xi * xi * a) + (1.0 + xi) * u * u / (xi * a * a);
    }
    Some([ll, l_eta, l_ee, l_ex, l_x, l_xx])
}

/// Pseudo-log-likelihood of a log-linear-scale GPD; −∞ outside the support.
pub fn regression_loglik(design: &Design, theta: &[f64], xi: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..design.len() {
        let eta: f64 = design.row(i).iter().zip(theta).map(|(a, b)| a * b).sum();
        match obs_terms(design.y[i], eta, xi) {
            Some(t) => s += t[0],
            None => return f64::NEG_INFINITY,
        }
    }
    s
}

struct Accum {
    ll: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn accumulate(design: &Design, theta: &[f64], xi: f64) -> Option<Accum> {
    let p = design.p;
    let chunk = 4096;
    let n = design.len();
    let parts: Option<Vec<Accum>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = Accum {
                ll: 0.0,
                grad: DVector::zeros(p + 1),
                hess: DMatrix::zeros(p + 1, p + 1),
            };
            for i in c * chunk..((c + 1) * chunk).min(n) {
                let x = design.row(i);
                let eta: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                let [ll, le, lee, lex, lx, lxx] = obs_terms(design.y[i], eta, xi)?;
                acc.ll += ll;
                for a in 0..p {
                    acc.grad[a] += le * x[a];
                    for b in 0..=a {
                        acc.hess[(a, b)] += lee * x[a] * x[b];
                    }
                    acc.hess[(p, a)] += lex * x[a];
                }
                acc.grad[p] += lx;
                acc.hess[(p, p)] += lxx;
            }
            Some(acc)
        })
        .collect();
    let parts = parts?;
    let mut total = Accum {
        ll: 0.0,
        grad: DVector::zeros(p + 1),
        hess: DMatrix::zeros(p + 1, p + 1),
    };
    // ordered reduction keeps results independent of thread count
    for a in parts {
        total.ll += a.ll;
        total.grad += a.grad;
        total.hess += a.hess;
    }
    for a in 0..=p {
        for b in 0..a {
            total.hess[(b, a)] = total.hess[(a, b)];
        }
    }
    Some(total)
}

/// Maximize the GPD pseudo-log-likelihood with log σ = xᵀθ by damped
/// Newton (Levenberg–Marquardt) steps with analytic derivatives.
pub fn fit_gpd_regression(design: &Design, opts: &GpdRegressionOptions) -> Result<GpdRegressionFit> {
    let p = design.p;
    if design.is_empty() {
        return Err(Error::InvalidInput("no excesses to fit".into()));
    }
    if design.y.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::InvalidInput("excesses must be finite and non-negative".into()));
    }
    let cond = condition_number(design);
    if cond > COLLINEAR_LIMIT {
        return Err(Error::Collinear { condition: cond });
    }
    let fixed_theta: Vec<Option<f64>> = if opts.fixed_theta.is_empty() {
        vec![None; p]
    } else {
        opts.fixed_theta.clone()
    };
    let (mut theta, mut xi) = match &opts.start {
        Some((t, x)) => (t.clone(), *x),
        None => {
            let mean = design.y.iter().sum::<f64>() / design.len() as f64;
            let mut t = vec![0.0; p];
            t[0] = mean.max(1e-12).ln();
            (t, 0.0)
        }
    };
    for (k, f) in fixed_theta.iter().enumerate() {
        if let Some(v) = f {
            theta[k] = *v;
        }
    }
    if let Some(x) = opts.fixed_xi {
        xi = x;
    }
    let mut free: Vec<usize> = (0..p).filter(|&k| fixed_theta[k].is_none()).collect();
    if opts.fixed_xi.is_none() {
        free.push(p);
    }

    // make the start feasible by inflating the intercept
    let mut acc = accumulate(design, &theta, xi);
    let mut guard = 0;
    while acc.is_none() {
        guard += 1;
        if guard > 200 || fixed_theta[0].is_some() {
            return Err(Error::InvalidInput("no feasible starting point for the GPD fit".into()));
        }
        theta[0] += 0.5;
        acc = accumulate(design, &theta, xi);
    }
    let mut acc = acc.expect("feasible");
    let max_iter = opts.max_iterations.unwrap_or(500);
    let mut mu = 1e-3;
    let q = free.len();
    for iter in 1..=max_iter {
        let g = DVector::from_iterator(q, free.iter().map(|&k| acc.grad[k]));
        let h = DMatrix::from_fn(q, q, |a, b| -acc.hess[(free[a], free[b])]);
        let scale = h.diagonal().map(|d| d.abs().max(1e-12));
        let gnorm = g.iter().zip(scale.iter()).map(|(gi, si)| gi * gi / si).sum::<f64>().sqrt();
        if gnorm < 1e-9 {
            return Ok(GpdRegressionFit {
                theta,
                xi,
                loglik: acc.ll,
                iterations: iter,
            });
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut m = h.clone();
            for a in 0..q {
                m[(a, a)] += mu * scale[a];
            }
            let step = match m.clone().cholesky() {
                Some(c) => c.solve(&g),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let mut t_new = theta.clone();
            let mut xi_new = xi;
            for (a, &k) in free.iter().enumerate() {
                if k == p {
                    xi_new += step[a];
                } else {
                    t_new[k] += step[a];
                }
            }
            let in_range = (XI_MIN..=XI_MAX).contains(&xi_new) || opts.fixed_xi.is_some();
            if in_range {
                if let Some(a_new) = accumulate(design, &t_new, xi_new) {
                    if a_new.ll >= acc.ll - 1e-12 * acc.ll.abs() {
                        let gain = a_new.ll - acc.ll;
                        theta = t_new;
                        xi = xi_new;
                        acc = a_new;
                        mu = (mu * 0.3).max(1e-12);
                        accepted = true;
                        if gain.abs() <= 1e-15 * acc.ll.abs().max(1.0)
                            && step.amax() < 1e-10
                        {
                            return Ok(GpdRegressionFit {
                                theta,
                                xi,
                                loglik: acc.ll,
                                iterations: iter,
                            });
                        }
                        break;
                    }
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            // no improving step exists at machine precision
            if gnorm < 1e-5 {
                return Ok(GpdRegressionFit {
                    theta,
                    xi,
                    loglik: acc.ll,
                    iterations: iter,
                });
            }
            let mut last = theta;
            last.push(xi);
            return Err(Error::NonConvergence {
                iterations: iter,
                last,
                grad_norm: gnorm,
            });
        }
    }
    let gnorm = acc.grad.norm();
    let mut last = theta;
    last.push(xi);
    Err(Error::NonConvergence {
        iterations: max_iter,
        last,
        grad_norm: gnorm,
    })
}

/// Standard two-parameter GPD maximum likelihood on a single sample.
pub fn fit_gpd(excesses: &[f64]) -> Result<GpdParams> {
    let mut d = Design::new(1);
    for &y in excesses {
        d.push(y, &[1.0]);
    }
    let fit = fit_gpd_regression(&d, &GpdRegressionOptions::default())?;
    Ok(GpdParams::new(fit.theta[0].exp(), fit.xi))
}

/// Excesses above u(s) at observed station entries with their scale
/// covariates, as a regression design for `model`.
pub fn obs_design(
    panel: &StationPanel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    threshold: &ThresholdField,
    model: TailModelId,
    link: ClimScaleLink,
) -> Result<Design> {
    if model == TailModelId::M2 {
        if let Some(s) = sites.iter().find(|s| !(s.coast_dist > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "model M2 needs positive coast distance (site {})",
                s.site_id
            )));
        }
    }
    if let Some(s) = sites.iter().find(|s| !(s.sigma_c > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "climate scale missing at site {}; fit the climate tail first",
            s.site_id
        )));
    }
    let mut d = Design::new(model.covariate_spec(link).len());
    for (t, s, x) in panel.observed_entries() {
        let u = threshold.at(sites[s].u_c);
        if x > u {
            let c = ScaleCovariates {
                sigma_c: sites[s].sigma_c,
                coast_dist: sites[s].coast_dist,
                m_i: time_covs[t].m_i,
            };
            d.push(x - u, &model.design_row(link, c));
        }
    }
    Ok(d)
}

/// Fit the observational tail. A nested fit can be given as `warm`; its
/// coefficients are matched by covariate name so the result is at least as
/// likely as the nested model.
pub fn fit_obs_design(
    design: &Design,
    model: TailModelId,
    link: ClimScaleLink,
    warm: Option<&ObsTailFit>,
    opts: GpdRegressionOptions,
) -> Result<ObsTailFit> {
    let spec = model.covariate_spec(link);
    let mut opts = opts;
    if opts.start.is_none() {
        if let Some(w) = warm {
            let theta: Vec<f64> = spec
                .iter()
                .map(|name| {
                    w.covariate_spec
                        .iter()
                        .position(|n| n == name)
                        .map_or(0.0, |k| w.theta[k])
                })
                .collect();
            opts.start = Some((theta, w.xi_o));
        }
    }
    let fit = fit_gpd_regression(design, &opts)?;
    Ok(ObsTailFit {
        model_id: model,
        clim_scale_link: link,
        theta: fit.theta,
        xi_o: fit.xi,
        covariate_spec: spec,
        loglik: fit.loglik,
        n_excesses: design.len(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn fit_obs_gpd(
    panel: &StationPanel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    threshold: &ThresholdField,
    model: TailModelId,
    link: ClimScaleLink,
    warm: Option<&ObsTailFit>,
) -> Result<ObsTailFit> {
    let d = obs_design(panel, sites, time_covs, threshold, model, link)?;
    fit_obs_design(&d, model, link, warm, GpdRegressionOptions::default())
}

/// Threshold, climate tail summary and observational tail fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub threshold: ThresholdField,
    pub xi_c: f64,
    pub obs: ObsTailFit,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpd_cdf_examples() {
        assert!((gpd_cdf(1.0, GpdParams::new(1.0, 0.0)) - 0.632_120_558_8).abs() < 1e-9);
        assert_eq!(gpd_cdf(2.0, GpdParams::new(1.0, -0.5)), 1.0);
        assert!((gpd_cdf(1.0, GpdParams::new(2.0, 0.5)) - 0.36).abs() < 1e-12);
    }

    #[test]
    fn exponential_limit_continuity() {
        for y in [0.1, 1.0, 5.0] {
            let e = gpd_cdf(y, GpdParams::new(1.3, 0.0));
            for xi in [1e-12, -1e-12] {
                assert!((gpd_cdf(y, GpdParams::new(1.3, xi)) - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn survival_inverse_roundtrip() {
        for p in [GpdParams::new(1.0, -0.1), GpdParams::new(2.0, 0.3), GpdParams::new(0.7, 0.0)] {
            for s in [0.9, 0.1, 1e-3, 1e-6] {
                let y = gpd_survival_inverse(s, p);
                assert!((gpd_survival(y, p) - s).abs() < 1e-12 * s.max(1e-3));
            }
        }
    }

    #[test]
    fn analytic_tail_quantile() {
        // λ (1 − H) = 1/9200 with λ = 0.1
        let p = GpdParams::new(1.0, -0.1);
        let y = gpd_survival_inverse(1.0 / 920.0, p);
        assert!((y - 4.946).abs() < 1e-3, "{y}");
        let root = brent_bounded(|z| (gpd_survival(z, p) - 1.0 / 920.0).abs(), 0.0, 10.0, 1e-12).x;
        assert!((root - y).abs() < 1e-6);
    }

    #[test]
    fn derivative_series_matches_closed_form() {
        let (y, eta) = (1.7, 0.2);
        let near = obs_terms(y, eta, 1.01e-4).unwrap();
        let series = obs_terms(y, eta, 0.99e-4).unwrap();
        for k in [4, 5] {
            assert!((near[k] - series[k]).abs() < 1e-6, "k={k}: {} vs {}", near[k], series[k]);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut d = Design::new(2);
        for i in 0..50 {
            let x = i as f64 / 50.0;
            d.push(0.1 + (i % 7) as f64 * 0.3, &[1.0, x]);
        }
        let theta = [0.3, 0.2];
        for xi in [-0.2, 0.0, 0.25] {
            let acc = accumulate(&d, &theta, xi).unwrap();
            let h = 1e-6;
            let f = |t: [f64; 2], x: f64| regression_loglik(&d, &t, x);
            let g0 = (f([theta[0] + h, theta[1]], xi) - f([theta[0] - h, theta[1]], xi)) / (2.0 * h);
            let gx = (f(theta, xi + h) - f(theta, xi - h)) / (2.0 * h);
            assert!((acc.grad[0] - g0).abs() < 1e-5 * g0.abs().max(1.0));
            assert!((acc.grad[2] - gx).abs() < 1e-5 * gx.abs().max(1.0));
        }
    }

    #[test]
    fn collinear_design_rejected() {
        let mut d = Design::new(2);
        for i in 0..100 {
            d.push(1.0 + i as f64 * 0.01, &[1.0, 1.0]);
        }
        assert!(matches!(
            fit_gpd_regression(&d, &GpdRegressionOptions::default()),
            Err(Error::Collinear { .. })
        ));
    }

    #[test]
    fn lambda_definition_and_clamp() {
        let taus = [0.5, 0.9, 0.95, 0.99];
        let body = BodyCdf::new(&taus, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let (l, c) = exceedance_rate(&body, 2.0);
        assert!((l - 0.05).abs() < 1e-10 && !c);
        let (l, c) = exceedance_rate(&body, -100.0);
        assert!(l == LAMBDA_MAX && c);
    }
}

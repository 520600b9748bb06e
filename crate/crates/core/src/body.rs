//! Body of the marginal distribution: asymmetric-Laplace (check-loss)
//! quantile regressions on a τ grid, joined per (time, site) by a monotone
//! cubic interpolant of the quantile function.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::SiteCovariates;
use crate::datastore::{StationPanel, TimeCovariates};
use crate::error::{Error, Result};
use crate::numeric::optim::{nelder_mead, numeric_gradient, NelderMeadOptions};
use crate::numeric::{stats, Pchip};

/// Default τ grid: 0.01, 0.05, 0.10, ..., 0.95, 0.99.
pub fn default_tau_grid() -> Vec<f64> {
    let mut taus = vec![0.01];
    taus.extend((1..=19).map(|k| k as f64 * 0.05));
    taus.push(0.99);
    taus.iter().map(|t| (t * 1e6_f64).round() / 1e6).collect()
}

/// Check function ρ_τ(z) = {τ − 1(z < 0)} z.
#[inline]
pub fn check_loss(z: f64, tau: f64) -> f64 {
    if z < 0.0 {
        (tau - 1.0) * z
    } else {
        tau * z
    }
}

/// Location structures for the body quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyForm {
    /// β0
    #[serde(rename = "base")]
    Base,
    /// β0 + β1 q_c(s)
    #[serde(rename = "clim")]
    Clim,
    /// β0 + β1 q_c(s) + β2 M^I(t)
    #[serde(rename = "clim+mi")]
    ClimMi,
}

impl BodyForm {
    pub fn covariate_spec(self) -> Vec<String> {
        let names: &[&str] = match self {
            BodyForm::Base => &["1"],
            BodyForm::Clim => &["1", "q_c"],
            BodyForm::ClimMi => &["1", "q_c", "M_I"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn n_coef(self) -> usize {
        match self {
            BodyForm::Base => 1,
            BodyForm::Clim => 2,
            BodyForm::ClimMi => 3,
        }
    }

    #[inline]
    pub fn predict(self, betas: &[f64], q_c: f64, m_i: f64) -> f64 {
        match self {
            BodyForm::Base => betas[0],
            BodyForm::Clim => betas[0] + betas[1] * q_c,
            BodyForm::ClimMi => betas[0] + betas[1] * q_c + betas[2] * m_i,
        }
    }

    pub fn row(self, q_c: f64, m_i: f64) -> Vec<f64> {
        match self {
            BodyForm::Base => vec![1.0],
            BodyForm::Clim => vec![1.0, q_c],
            BodyForm::ClimMi => vec![1.0, q_c, m_i],
        }
    }
}

impl std::str::FromStr for BodyForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(BodyForm::Base),
            "clim" => Ok(BodyForm::Clim),
            "clim+mi" => Ok(BodyForm::ClimMi),
            _ => Err(Error::InvalidInput(format!("unknown body model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AldFit {
    pub tau: f64,
    pub betas: Vec<f64>,
    pub log_psi: f64,
    pub covariate_spec: Vec<String>,
}

impl AldFit {
    pub fn psi(&self) -> f64 {
        self.log_psi.exp()
    }
}

/// Rows of a regression problem: response plus a dense design matrix.
#[derive(Debug, Clone, Default)]
pub struct Design {
    pub y: Vec<f64>,
    /// Row-major n × p.
    pub x: Vec<f64>,
    pub p: usize,
}

impl Design {
    pub fn new(p: usize) -> Self {
        Self {
            y: Vec::new(),
            x: Vec::new(),
            p,
        }
    }

    pub fn push(&mut self, y: f64, row: &[f64]) {
        debug_assert_eq!(row.len(), self.p);
        self.y.push(y);
        self.x.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn fitted(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Least-squares solution, used as the starting point for robust fits.
    pub fn ols(&self) -> Vec<f64> {
        let p = self.p;
        let mut xtx = nalgebra::DMatrix::<f64>::zeros(p, p);
        let mut xty = nalgebra::DVector::<f64>::zeros(p);
        for i in 0..self.len() {
            let r = self.row(i);
            for a in 0..p {
                xty[a] += r[a] * self.y[i];
                for b in 0..p {
                    xtx[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..p {
            xtx[(a, a)] += 1e-10 * (1.0 + xtx[(a, a)]);
        }
        match xtx.cholesky() {
            Some(c) => c.solve(&xty).iter().copied().collect(),
            None => vec![0.0; p],
        }
    }
}

/// Minimum observation count for an ALD fit.
pub const MIN_ALD_OBS: usize = 50;

/// Fit the ALD_τ model by maximizing its log-likelihood. The location
/// coefficients minimize the summed check loss; ψ̂ is the mean check loss.
pub fn fit_ald_design(design: &Design, tau: f64, covariate_spec: Vec<String>) -> Result<AldFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau {tau} outside (0,1)")));
    }
    if design.len() < MIN_ALD_OBS {
        return Err(Error::InvalidInput(format!(
            "ALD fit needs at least {MIN_ALD_OBS} observations, got {}",
            design.len()
        )));
    }
    let n = design.len();
    let objective = |beta: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            s += check_loss(design.y[i] - design.fitted(i, beta), tau);
        }
        s / n as f64
    };

    // start from least squares with the intercept shifted to the residual τ-quantile
    let mut start = design.ols();
    let resid: Vec<f64> = (0..n).map(|i| design.y[i] - design.fitted(i, &start)).collect();
    let shift = stats::quantiles(&resid, &[tau]).expect("non-empty")[0];
    start[0] += shift;

    let opts = NelderMeadOptions {
        max_evaluations: 4000 * (design.p + 1),
        f_tol: 1e-13,
        x_tol: 1e-10,
        restarts: 4,
        initial_step: 0.05,
    };
    let res = nelder_mead(objective, &start, &opts);
    if !res.converged {
        let g = numeric_gradient(objective, &res.x);
        return Err(Error::NonConvergence {
            iterations: res.evaluations,
            grad_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            last: res.x,
        });
    }
    let psi = res.fx.max(1e-300);
    Ok(AldFit {
        tau,
        betas: res.x,
        log_psi: psi.ln(),
        covariate_spec,
    })
}

/// ALD log-likelihood of a fit on a design.
pub fn ald_loglik(design: &Design, fit: &AldFit) -> f64 {
    let psi = fit.psi();
    let tau = fit.tau;
    (0..design.len())
        .map(|i| {
            let z = design.y[i] - design.fitted(i, &fit.betas);
            (tau * (1.0 - tau) / psi).ln() - check_loss(z, tau) / psi
        })
        .sum()
}

/// Build the regression design for quantile level `tau_index` of the body
/// grid from observed panel entries.
pub fn body_design(
    panel: &StationPanel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    tau_index: usize,
    form: BodyForm,
) -> Design {
    let mut d = Design::new(form.n_coef());
    for (t, s, y) in panel.observed_entries() {
        d.push(y, &form.row(sites[s].q_c[tau_index], time_covs[t].m_i));
    }
    d
}

/// Fit one ALD regression on panel data at `taus[tau_index]`.
pub fn fit_ald(
    panel: &StationPanel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    taus: &[f64],
    tau_index: usize,
    form: BodyForm,
) -> Result<AldFit> {
    let d = body_design(panel, sites, time_covs, tau_index, form);
    fit_ald_design(&d, taus[tau_index], form.covariate_spec())
}

/// Fitted body: one ALD fit per τ, evaluated per (time, site) through a
/// monotone cubic interpolant of the quantile function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub tau_grid: Vec<f64>,
    pub form: BodyForm,
    pub fits: Vec<AldFit>,
}

/// Training-domain cell used for the crossing check: a site's climate
/// quantiles and the range of temporal covariate values it was seen with.
#[derive(Debug, Clone)]
pub struct TrainingCell<'a> {
    pub label: String,
    pub q_c: &'a [f64],
    pub m_i_min: f64,
    pub m_i_max: f64,
}

impl BodyModel {
    /// Assemble the body from per-τ fits, rejecting quantile crossing at any
    /// training cell. Quantiles are affine in M^I, so checking the ends of
    /// each site's covariate range covers every training (t, s).
    pub fn build(fits: Vec<AldFit>, form: BodyForm, training: &[TrainingCell<'_>]) -> Result<Self> {
        if fits.len() < 2 {
            return Err(Error::InvalidInput("body needs at least two τ levels".into()));
        }
        let tau_grid: Vec<f64> = fits.iter().map(|f| f.tau).collect();
        if tau_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("fits must have strictly increasing τ".into()));
        }
        let model = Self {
            tau_grid,
            form,
            fits,
        };
        for cell in training {
            for m in [cell.m_i_min, cell.m_i_max] {
                let q = model.knot_quantiles(cell.q_c, m);
                if let Some(k) = q.windows(2).position(|w| w[1] <= w[0]) {
                    return Err(Error::CrossingQuantiles {
                        time: format!("M_I={m}"),
                        site: cell.label.clone(),
                        tau: model.tau_grid[k + 1],
                    });
                }
            }
        }
        Ok(model)
    }

    pub fn knot_quantiles(&self, q_c: &[f64], m_i: f64) -> Vec<f64> {
        self.fits
            .iter()
            .enumerate()
            .map(|(k, f)| self.form.predict(&f.betas, q_c[k], m_i))
            .collect()
    }

    /// Distribution function of the body at one (time, site).
    pub fn local(&self, q_c: &[f64], m_i: f64) -> Result<BodyCdf> {
        BodyCdf::new(&self.tau_grid, &self.knot_quantiles(q_c, m_i))
    }
}

/// Fit every τ level in parallel and assemble the body, checking for
/// crossing at all training sites.
pub fn fit_body(
    panel: &StationPanel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    taus: &[f64],
    form: BodyForm,
) -> Result<BodyModel> {
    let fits: Vec<AldFit> = (0..taus.len())
        .into_par_iter()
        .map(|k| fit_ald(panel, sites, time_covs, taus, k, form))
        .collect::<Result<_>>()?;
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); sites.len()];
    for (t, s, _) in panel.observed_entries() {
        let m = time_covs[t].m_i;
        ranges[s].0 = ranges[s].0.min(m);
        ranges[s].1 = ranges[s].1.max(m);
    }
    let cells: Vec<TrainingCell<'_>> = sites
        .iter()
        .zip(&ranges)
        .filter(|(_, r)| r.0.is_finite())
        .map(|(s, r)| TrainingCell {
            label: s.site_id.clone(),
            q_c: &s.q_c,
            m_i_min: r.0,
            m_i_max: r.1,
        })
        .collect();
    BodyModel::build(fits, form, &cells)
}

/// Body distribution at a fixed (time, site).
#[derive(Debug, Clone)]
pub struct BodyCdf {
    quantile: Pchip,
    lo: f64,
    hi: f64,
}

impl BodyCdf {
    pub fn new(taus: &[f64], knots: &[f64]) -> Result<Self> {
        if let Some(k) = knots.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::CrossingQuantiles {
                time: "-".into(),
                site: "-".into(),
                tau: taus[k + 1],
            });
        }
        let quantile = Pchip::new(taus, knots);
        let lo = quantile.eval(0.0);
        let hi = quantile.eval(1.0);
        Ok(Self { quantile, lo, hi })
    }

    /// Quantile function; linear beyond the outer knots.
    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile.eval(p.clamp(0.0, 1.0))
    }

    /// Distribution function, inverting the quantile spline by bisection.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let (mut a, mut b) = (0.0_f64, 1.0_f64);
        while b - a > 1e-13 {
            let m = 0.5 * (a + b);
            if self.quantile.eval(m) < x {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }
}

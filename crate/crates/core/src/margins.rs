//! Composite marginal model (spline body below the threshold, covariate GPD
//! above) and probability integral transforms to standard scales.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{BodyCdf, BodyModel};
use crate::covariates::SiteCovariates;
use crate::datastore::{StationPanel, TimeCovariates};
use crate::error::{Error, Result};
use crate::tail::{exceedance_rate, gpd_survival, gpd_survival_inverse, GpdParams, ScaleCovariates, TailModel};

/// Fitted marginal model plus the covariates of every site it can be
/// evaluated at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub body: BodyModel,
    pub tail: TailModel,
    pub stations: Vec<SiteCovariates>,
    pub grid: Vec<SiteCovariates>,
}

impl MarginalModel {
    /// The distribution at one (time, site).
    pub fn at(&self, site: &SiteCovariates, time: &TimeCovariates) -> Result<LocalMargin> {
        LocalMargin::new(&self.body, &self.tail, site, time)
    }

    pub fn threshold(&self, site: &SiteCovariates) -> f64 {
        self.tail.threshold.at(site.u_c)
    }

    /// Local margins for every site of a set at fixed time covariates.
    pub fn locals(&self, sites: &[SiteCovariates], time: &TimeCovariates) -> Result<Vec<LocalMargin>> {
        sites.par_iter().map(|s| self.at(s, time)).collect()
    }
}

/// Marginal distribution F_{t,s} at a fixed (time, site).
#[derive(Debug, Clone)]
pub struct LocalMargin {
    pub body: BodyCdf,
    pub u: f64,
    pub lambda: f64,
    pub lambda_clamped: bool,
    pub gpd: GpdParams,
}

impl LocalMargin {
    pub fn new(body: &BodyModel, tail: &TailModel, site: &SiteCovariates, time: &TimeCovariates) -> Result<Self> {
        let cdf = body.local(&site.q_c, time.m_i)?;
        let u = tail.threshold.at(site.u_c);
        let (lambda, lambda_clamped) = exceedance_rate(&cdf, u);
        if lambda_clamped {
            log::warn!(
                "exceedance rate clamped to {lambda} at site {} (M_I = {})",
                site.site_id,
                time.m_i
            );
        }
        let gpd = tail.obs.params(ScaleCovariates {
            sigma_c: site.sigma_c,
            coast_dist: site.coast_dist,
            m_i: time.m_i,
        });
        let mut m = Self::from_parts(cdf, u, lambda, gpd);
        m.lambda_clamped = lambda_clamped;
        Ok(m)
    }

    pub fn from_parts(body: BodyCdf, u: f64, lambda: f64, gpd: GpdParams) -> Self {
        Self {
            body,
            u,
            lambda,
            lambda_clamped: false,
            gpd,
        }
    }

    /// Upper endpoint of the distribution (finite when ξ < 0).
    pub fn endpoint(&self) -> f64 {
        self.gpd.endpoint().map_or(f64::INFINITY, |e| self.u + e)
    }

    /// 1 − F(x), kept accurate deep in the tail.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= self.u {
            1.0 - self.body.cdf(x)
        } else {
            self.lambda * gpd_survival(x - self.u, self.gpd)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.u {
            self.body.cdf(x)
        } else {
            1.0 - self.lambda * gpd_survival(x - self.u, self.gpd)
        }
    }

    /// Quantile with exceedance probability `surv`.
    pub fn quantile_survival(&self, surv: f64) -> f64 {
        if surv >= self.lambda {
            self.body.quantile(1.0 - surv)
        } else {
            self.u + gpd_survival_inverse(surv / self.lambda, self.gpd)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_survival(1.0 - p)
    }

    /// X^P = 1 / (1 − F(x)).
    pub fn to_pareto(&self, x: f64) -> f64 {
        1.0 / self.survival(x)
    }

    /// x = F⁻¹(exp(−1/y)) for a unit-Fréchet value y > 0.
    pub fn from_frechet(&self, y: f64) -> f64 {
        self.quantile_survival(-(-1.0 / y).exp_m1())
    }

    /// Pareto-scale threshold T^P = 1/(1 − F(T)); infinite beyond the endpoint.
    pub fn pareto_threshold(&self, temp: f64) -> f64 {
        let s = self.survival(temp);
        if s <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / s
        }
    }
}

/// Standardized scales for transformed panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Celsius,
    Uniform,
    Pareto,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Celsius => "celsius",
            Scale::Uniform => "uniform",
            Scale::Pareto => "pareto",
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "celsius" => Ok(Scale::Celsius),
            "uniform" => Ok(Scale::Uniform),
            "pareto" => Ok(Scale::Pareto),
            _ => Err(Error::InvalidInput(format!("unknown scale `{s}`"))),
        }
    }
}

/// A panel on a standardized scale; the mask is that of the source panel.
#[derive(Debug, Clone, PartialEq)]
pub struct StdPanel {
    pub panel: StationPanel,
    pub scale: Scale,
}

fn transform_rows<F>(
    panel: &StationPanel,
    model: &MarginalModel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    f: F,
) -> Result<Vec<f64>>
where
    F: Fn(&LocalMargin, f64) -> f64 + Sync,
{
    if sites.len() != panel.n_sites() || time_covs.len() != panel.n_times() {
        return Err(Error::InvalidInput("covariates do not match panel shape".into()));
    }
    let n = panel.n_sites();
    let rows: Vec<Vec<f64>> = (0..panel.n_times())
        .into_par_iter()
        .map(|t| {
            let (vals, obs) = panel.row(t);
            let mut out = vec![f64::NAN; n];
            for s in 0..n {
                if obs[s] {
                    let m = model.at(&sites[s], &time_covs[t])?;
                    out[s] = f(&m, vals[s]);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

fn check_endpoint(panel: &StationPanel, values: &[f64]) -> Result<()> {
    let n = panel.n_sites();
    let bad: Vec<(usize, usize)> = values
        .iter()
        .zip(&panel.observed)
        .enumerate()
        .filter(|(_, (v, &o))| o && !v.is_finite())
        .map(|(i, _)| (i / n, i % n))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::EndpointViolation { entries: bad })
    }
}

/// Unit-Pareto transform of every observed entry.
pub fn to_pareto(
    panel: &StationPanel,
    model: &MarginalModel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
) -> Result<StdPanel> {
    let values = transform_rows(panel, model, sites, time_covs, |m, x| m.to_pareto(x))?;
    check_endpoint(panel, &values)?;
    Ok(StdPanel {
        panel: panel.with_values(values),
        scale: Scale::Pareto,
    })
}

/// Uniform transform F_{t,s}(x) of every observed entry.
pub fn to_uniform(
    panel: &StationPanel,
    model: &MarginalModel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
) -> Result<StdPanel> {
    let values = transform_rows(panel, model, sites, time_covs, |m, x| {
        let s = m.survival(x);
        if s <= 0.0 {
            f64::NAN
        } else {
            1.0 - s
        }
    })?;
    check_endpoint(panel, &values)?;
    Ok(StdPanel {
        panel: panel.with_values(values),
        scale: Scale::Uniform,
    })
}

/// Back-transform a uniform-scale panel to °C via F⁻¹_{t,s}.
pub fn from_uniform(
    std: &StdPanel,
    model: &MarginalModel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
) -> Result<StationPanel> {
    if std.scale != Scale::Uniform {
        return Err(Error::InvalidInput("panel is not on the uniform scale".into()));
    }
    let values = transform_rows(&std.panel, model, sites, time_covs, |m, p| m.quantile(p))?;
    Ok(std.panel.with_values(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stats::std_normal_quantile;

    fn local() -> LocalMargin {
        let taus = crate::body::default_tau_grid();
        let knots: Vec<f64> = taus.iter().map(|&t| 20.0 + 3.0 * std_normal_quantile(t)).collect();
        let body = BodyCdf::new(&taus, &knots).unwrap();
        let u = 23.0;
        let lambda = 1.0 - body.cdf(u);
        LocalMargin::from_parts(body, u, lambda, GpdParams::new(1.2, -0.15))
    }

    #[test]
    fn continuity_at_threshold() {
        let m = local();
        let below = m.body.cdf(m.u);
        let above = 1.0 - m.lambda * gpd_survival(0.0, m.gpd);
        assert!((below - above).abs() < 1e-12);
        assert!((m.cdf(m.u + 1e-12) - m.cdf(m.u)).abs() < 1e-9);
    }

    #[test]
    fn pareto_definition() {
        let m = local();
        let x = m.quantile(0.5);
        assert!((m.to_pareto(x) - 2.0).abs() < 1e-8);
        let x = m.quantile(0.99);
        assert!((m.to_pareto(x) - 100.0).abs() < 1e-6);
    }

    #[test]
    fn frechet_median_and_subunit() {
        let m = local();
        let med = m.quantile(0.5);
        assert!((m.from_frechet(1.0 / std::f64::consts::LN_2) - med).abs() < 1e-9);
        let low = m.from_frechet(0.5);
        assert!((m.cdf(low) - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn frechet_roundtrip() {
        let m = local();
        let lo = m.quantile(0.05);
        for k in 0..200 {
            let x = lo + k as f64 * (m.endpoint() - lo - 1e-3) / 200.0;
            // uniform value carried as its complement for precision near 1
            let y = -1.0 / (-m.survival(x)).ln_1p();
            assert!((m.from_frechet(y) - x).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn endpoint_maps_to_one() {
        let m = local();
        assert_eq!(m.cdf(m.endpoint()), 1.0);
        assert!(m.pareto_threshold(m.endpoint() + 1.0).is_infinite());
    }
}

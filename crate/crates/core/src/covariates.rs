//! Per-site covariates borrowed from the climate grid.

use serde::{Deserialize, Serialize};

use crate::datastore::{empirical_quantiles, nearest_indices, ClimateGrid, Projection, SiteKind, SiteMeta};
use crate::error::Result;

/// Spatial covariates attached to one modelled site. Station sites take the
/// values of their nearest grid site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteCovariates {
    pub site_id: String,
    pub kind: SiteKind,
    pub lon: f64,
    pub lat: f64,
    pub coast_dist: f64,
    pub grid_index: usize,
    /// Climate quantiles q_c at the body τ grid.
    pub q_c: Vec<f64>,
    /// Climate 0.9 quantile (threshold covariate).
    pub u_c: f64,
    /// Climate GPD scale; NaN until the climate tail is fitted.
    #[serde(deserialize_with = "crate::io::nan_or_f64")]
    pub sigma_c: f64,
}

pub const THRESHOLD_TAU: f64 = 0.9;

/// Grid quantile tables shared by all sites.
#[derive(Debug, Clone)]
pub struct GridQuantiles {
    pub taus: Vec<f64>,
    /// `q[s][k]` at `taus[k]`.
    pub q: Vec<Vec<f64>>,
    pub u_c: Vec<f64>,
}

impl GridQuantiles {
    pub fn compute(grid: &ClimateGrid, taus: &[f64]) -> Result<Self> {
        let q = empirical_quantiles(grid, taus)?;
        let u_c = empirical_quantiles(grid, &[THRESHOLD_TAU])?
            .into_iter()
            .map(|v| v[0])
            .collect();
        Ok(Self {
            taus: taus.to_vec(),
            q,
            u_c,
        })
    }
}

/// Attach grid covariates to `targets` by nearest grid site in projected km.
pub fn borrow_from_grid(
    targets: &[SiteMeta],
    grid_sites: &[SiteMeta],
    proj: &Projection,
    tables: &GridQuantiles,
    sigma_c: Option<&[f64]>,
) -> Vec<SiteCovariates> {
    let tc = proj.coords(targets);
    let gc = proj.coords(grid_sites);
    let nearest = nearest_indices(&tc, &gc);
    targets
        .iter()
        .zip(nearest)
        .map(|(site, g)| SiteCovariates {
            site_id: site.site_id.clone(),
            kind: site.kind,
            lon: site.lon,
            lat: site.lat,
            coast_dist: site.coast_dist,
            grid_index: g,
            q_c: tables.q[g].clone(),
            u_c: tables.u_c[g],
            sigma_c: sigma_c.map_or(f64::NAN, |s| s[g]),
        })
        .collect()
}

pub fn attach_sigma_c(sites: &mut [SiteCovariates], sigma_c: &[f64]) {
    for s in sites {
        s.sigma_c = sigma_c[s.grid_index];
    }
}

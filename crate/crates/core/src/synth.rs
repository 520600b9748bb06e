//! Synthetic datasets with known truth: station and grid panels driven by a
//! Gaussian field with a Matérn correlation, mapped through a normal body
//! with a covariate GPD tail, plus small generators for unit-level checks.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::body::{BodyForm, Design};
use crate::datastore::{
    distance, nearest_indices, save_panel_csv, Bbox, ClimateGrid, CovariateSeries, DayIndex, Projection, SiteKind,
    SiteMeta, StationPanel, TimeCovariates, SUMMER_DAYS,
};
use crate::dependence::{matern_variogram, VariogramParams};
use crate::error::{Error, Result};
use crate::io::write_json;
use crate::numeric::stats::{std_normal_cdf, std_normal_quantile};
use crate::tail::{gpd_survival, gpd_survival_inverse, GpdParams};

const KM_PER_DEGREE: f64 = 6371.0 * std::f64::consts::PI / 180.0;
/// Body/tail junction of the true margins.
pub const TRUTH_THRESHOLD_TAU: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyTruth {
    pub mu0: f64,
    /// Coefficient on ln(coast distance) of the mean.
    pub coast_coef: f64,
    /// Coefficient on M^I of the mean.
    pub mi_coef: f64,
    pub sd: f64,
    /// Offset of the grid sites' mean relative to stations.
    pub grid_bias: f64,
}

impl Default for BodyTruth {
    fn default() -> Self {
        Self {
            mu0: 16.0,
            coast_coef: 0.6,
            mi_coef: 1.0,
            sd: 3.0,
            grid_bias: -0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailTruth {
    /// Station log-scale coefficients on (1, ln σ_c, M^I).
    pub theta: [f64; 3],
    pub xi_o: f64,
    pub xi_c: f64,
    /// Typical grid scale and the relative spread of its west–east gradient.
    pub sigma_c0: f64,
    pub sigma_c_spread: f64,
}

impl Default for TailTruth {
    fn default() -> Self {
        Self {
            theta: [0.2, 1.0, 0.5],
            xi_o: -0.15,
            xi_c: -0.15,
            sigma_c0: 1.5,
            sigma_c_spread: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateTruth {
    pub m_i_start: f64,
    pub m_i_end: f64,
    /// Standard deviation of the monthly anomaly noise.
    pub noise_sd: f64,
}

impl Default for CovariateTruth {
    fn default() -> Self {
        Self {
            m_i_start: -0.4,
            m_i_end: 0.8,
            noise_sd: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_stations: usize,
    pub bbox: Bbox,
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub year0: i32,
    pub n_years: usize,
    pub body: BodyTruth,
    pub tail: TailTruth,
    pub vario: VariogramParams,
    pub covariates: CovariateTruth,
    /// Probability that a station entry is missing.
    pub missing_rate: f64,
    /// Make coastal stations more likely to be missing (same average rate).
    pub coastal_bias: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_stations: 40,
            bbox: Bbox {
                lon0: -10.0,
                lat0: 51.6,
                lon1: -6.0,
                lat1: 55.2,
            },
            grid_nx: 8,
            grid_ny: 8,
            year0: 1991,
            n_years: 20,
            body: BodyTruth::default(),
            tail: TailTruth::default(),
            vario: VariogramParams::new(1.5, 200.0, 1.0),
            covariates: CovariateTruth::default(),
            missing_rate: 0.2,
            coastal_bias: false,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_stations == 0 {
            problems.push("n_stations must be positive".to_string());
        }
        if self.grid_nx == 0 || self.grid_ny == 0 {
            problems.push("grid must have at least one point".to_string());
        }
        if self.n_years == 0 {
            problems.push("n_years must be positive".to_string());
        }
        if !(self.body.sd > 0.0) {
            problems.push("body.sd must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            problems.push("missing_rate must lie in [0, 1)".to_string());
        }
        for (name, xi) in [("tail.xi_o", self.tail.xi_o), ("tail.xi_c", self.tail.xi_c)] {
            if !(-0.9..=0.9).contains(&xi) {
                problems.push(format!("{name} outside [-0.9, 0.9]"));
            }
        }
        if !(self.tail.sigma_c0 > 0.0) {
            problems.push("tail.sigma_c0 must be positive".to_string());
        }
        if self.vario.validate().is_err() {
            problems.push("vario parameters invalid".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// True marginal law at one (time, site): N(μ, sd²) below the 0.9 quantile
/// u, GPD(σ, ξ) excesses above with rate λ ≈ 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthMargin {
    pub mu: f64,
    pub sd: f64,
    pub u: f64,
    pub lambda: f64,
    pub gpd: GpdParams,
}

impl TruthMargin {
    pub fn new(mu: f64, sd: f64, gpd: GpdParams) -> Self {
        let z = std_normal_quantile(TRUTH_THRESHOLD_TAU);
        Self {
            mu,
            sd,
            u: mu + sd * z,
            // from the rounded threshold, so the junction is continuous
            lambda: 1.0 - std_normal_cdf(z),
            gpd,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.u {
            std_normal_cdf((x - self.mu) / self.sd)
        } else {
            1.0 - self.lambda * gpd_survival(x - self.u, self.gpd)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 1.0 - self.lambda {
            self.mu + self.sd * std_normal_quantile(p)
        } else {
            self.u + gpd_survival_inverse((1.0 - p) / self.lambda, self.gpd)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationTruth {
    pub site_id: String,
    pub mu: f64,
    pub grid_index: usize,
    pub sigma_c: f64,
}

/// Everything needed to recompute the true margins and dependence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub stations: Vec<StationTruth>,
    pub grid_mu: Vec<f64>,
    pub grid_sigma_c: Vec<f64>,
    pub missing_prob: Vec<f64>,
}

impl SynthTruth {
    pub fn station_margin(&self, s: usize, m_i: f64) -> TruthMargin {
        let st = &self.stations[s];
        let t = &self.spec.tail;
        let sigma = (t.theta[0] + t.theta[1] * st.sigma_c.ln() + t.theta[2] * m_i).exp();
        TruthMargin::new(
            st.mu + self.spec.body.mi_coef * m_i,
            self.spec.body.sd,
            GpdParams::new(sigma, t.xi_o),
        )
    }

    pub fn grid_margin(&self, g: usize, m_i: f64) -> TruthMargin {
        TruthMargin::new(
            self.grid_mu[g] + self.spec.body.mi_coef * m_i,
            self.spec.body.sd,
            GpdParams::new(self.grid_sigma_c[g], self.spec.tail.xi_c),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub stations: StationPanel,
    pub grid: ClimateGrid,
    pub covariates: CovariateSeries,
    pub truth: SynthTruth,
}

impl SynthData {
    /// Write `stations.csv`, `grid.csv`, `covariates.csv` and `truth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_panel_csv(&self.stations, &dir.join("stations.csv"))?;
        save_panel_csv(&self.grid.to_panel(), &dir.join("grid.csv"))?;
        self.covariates.save(&dir.join("covariates.csv"))?;
        write_json(&self.truth, &dir.join("truth.json"))
    }
}

fn coast_distance(bbox: &Bbox, lon: f64, lat: f64) -> f64 {
    let (lo0, lo1) = (bbox.lon0.min(bbox.lon1), bbox.lon0.max(bbox.lon1));
    let (la0, la1) = (bbox.lat0.min(bbox.lat1), bbox.lat0.max(bbox.lat1));
    let dx = (lon - lo0).min(lo1 - lon) * KM_PER_DEGREE * lat.to_radians().cos();
    let dy = (lat - la0).min(la1 - lat) * KM_PER_DEGREE;
    dx.min(dy).max(0.0) + 1.0
}

fn site(id: String, lon: f64, lat: f64, bbox: &Bbox, kind: SiteKind) -> SiteMeta {
    SiteMeta {
        site_id: id,
        lon,
        lat,
        coast_dist: coast_distance(bbox, lon, lat),
        kind,
    }
}

/// Lower Cholesky factor of the Matérn correlation 1 − γ(h)/α.
fn correlation_factor(coords: &[[f64; 2]], vario: &VariogramParams) -> Result<DMatrix<f64>> {
    let n = coords.len();
    let corr = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if vario.alpha > 0.0 {
            1.0 - matern_variogram(distance(coords[i], coords[j]), vario) / vario.alpha
        } else {
            1.0
        }
    });
    let mut jitter = 0.0;
    while jitter <= 1e-6 {
        let mut m = corr.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c.l());
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
    }
    Err(Error::NotPositiveDefinite {
        min_eigenvalue: corr.symmetric_eigenvalues().min(),
    })
}

/// Simulate a dataset from `spec`. Station and grid values share one
/// Gaussian field per day, so their dependence is consistent.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let b = &spec.bbox;
    let (lo0, lo1) = (b.lon0.min(b.lon1), b.lon0.max(b.lon1));
    let (la0, la1) = (b.lat0.min(b.lat1), b.lat0.max(b.lat1));

    let stations: Vec<SiteMeta> = (0..spec.n_stations)
        .map(|i| {
            let lon = rng.random_range(lo0..lo1);
            let lat = rng.random_range(la0..la1);
            site(format!("st{i:03}"), lon, lat, b, SiteKind::Station)
        })
        .collect();
    let mut grid_sites = Vec::with_capacity(spec.grid_nx * spec.grid_ny);
    for iy in 0..spec.grid_ny {
        for ix in 0..spec.grid_nx {
            let lon = lo0 + (ix as f64 + 0.5) * (lo1 - lo0) / spec.grid_nx as f64;
            let lat = la0 + (iy as f64 + 0.5) * (la1 - la0) / spec.grid_ny as f64;
            grid_sites.push(site(format!("g{iy:02}_{ix:02}"), lon, lat, b, SiteKind::Grid));
        }
    }

    let proj = Projection::about_centroid(stations.iter().chain(&grid_sites));
    let st_coords = proj.coords(&stations);
    let grid_coords = proj.coords(&grid_sites);
    let nearest = nearest_indices(&st_coords, &grid_coords);

    // grid tail scale with a west–east gradient
    let xs: Vec<f64> = grid_coords.iter().map(|c| c[0]).collect();
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &x| (a.0.min(x), a.1.max(x)));
    let span = (xmax - xmin).max(1e-9);
    let grid_sigma_c: Vec<f64> = xs
        .iter()
        .map(|&x| spec.tail.sigma_c0 * (spec.tail.sigma_c_spread * ((x - xmin) / span - 0.5)).exp())
        .collect();
    let body = &spec.body;
    let grid_mu: Vec<f64> = grid_sites
        .iter()
        .map(|g| body.mu0 + body.coast_coef * g.coast_dist.ln() + body.grid_bias)
        .collect();
    let station_truth: Vec<StationTruth> = stations
        .iter()
        .zip(&nearest)
        .map(|(s, &g)| StationTruth {
            site_id: s.site_id.clone(),
            mu: body.mu0 + body.coast_coef * s.coast_dist.ln(),
            grid_index: g,
            sigma_c: grid_sigma_c[g],
        })
        .collect();

    // temporal covariates: linear trend plus monthly noise
    let mut times = Vec::new();
    let mut covs = Vec::new();
    let c = &spec.covariates;
    for y in 0..spec.n_years {
        let frac = if spec.n_years > 1 {
            y as f64 / (spec.n_years - 1) as f64
        } else {
            0.0
        };
        let monthly: [f64; 3] = std::array::from_fn(|_| c.noise_sd * rng.sample::<f64, _>(StandardNormal));
        for d in 0..SUMMER_DAYS {
            let month = if d < 30 {
                0
            } else if d < 61 {
                1
            } else {
                2
            };
            let m_i = c.m_i_start + (c.m_i_end - c.m_i_start) * frac + monthly[month];
            times.push(DayIndex {
                year: spec.year0 + y as i32,
                day: d,
            });
            covs.push(TimeCovariates {
                m_i,
                m_g: 0.7 * m_i,
                co2: 340.0 + 2.0 * y as f64,
            });
        }
    }

    let missing_prob: Vec<f64> = if spec.coastal_bias {
        let w: Vec<f64> = stations.iter().map(|s| 1.0 / (1.0 + s.coast_dist / 50.0)).collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        w.iter().map(|x| (spec.missing_rate * x / mean).min(0.95)).collect()
    } else {
        vec![spec.missing_rate; stations.len()]
    };

    let truth = SynthTruth {
        spec: spec.clone(),
        stations: station_truth,
        grid_mu,
        grid_sigma_c,
        missing_prob,
    };

    let all_coords: Vec<[f64; 2]> = st_coords.iter().chain(&grid_coords).copied().collect();
    let factor = correlation_factor(&all_coords, &spec.vario)?;
    let (ns, ng) = (stations.len(), grid_sites.len());
    let mut st_values = Vec::with_capacity(times.len() * ns);
    let mut grid_values = Vec::with_capacity(times.len() * ng);
    for cov in &covs {
        let z = nalgebra::DVector::from_iterator(ns + ng, (0..ns + ng).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let field = &factor * z;
        for s in 0..ns {
            let u = std_normal_cdf(field[s]);
            let x = truth.station_margin(s, cov.m_i).quantile(u);
            let missing = rng.random::<f64>() < truth.missing_prob[s];
            st_values.push(if missing { f64::NAN } else { x });
        }
        for g in 0..ng {
            let u = std_normal_cdf(field[ns + g]);
            grid_values.push(truth.grid_margin(g, cov.m_i).quantile(u));
        }
    }

    let panel = StationPanel::from_values(stations, times.clone(), st_values)?.drop_empty_rows();
    let grid = ClimateGrid::new(grid_sites, times.clone(), grid_values)?;
    let covariates = CovariateSeries::new(times, covs)?;
    Ok(SynthData {
        stations: panel,
        grid,
        covariates,
        truth,
    })
}

/// Independent GPD draws.
pub fn sample_gpd<R: Rng>(p: GpdParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| gpd_survival_inverse(1.0 - rng.random::<f64>(), p))
        .collect()
}

/// Excesses for a shared-shape climate fit: `n_each` draws per site scale.
pub fn clim_excesses<R: Rng>(sigmas: &[f64], xi: f64, n_each: usize, rng: &mut R) -> Vec<Vec<f64>> {
    sigmas
        .iter()
        .map(|&s| sample_gpd(GpdParams::new(s, xi), n_each, rng))
        .collect()
}

/// GPD excesses with log σ = θ₀ + θ₁ ln σ_c + θ₂ M^I, as a design on
/// (1, ln σ_c, M^I). σ_c is drawn on [0.8, 2] and M^I on [−1, 1].
pub fn m1_excess_design<R: Rng>(theta: [f64; 3], xi: f64, n: usize, rng: &mut R) -> Design {
    let mut d = Design::new(3);
    for _ in 0..n {
        let ls = rng.random_range(0.8f64.ln()..2.0f64.ln());
        let m = rng.random_range(-1.0..1.0);
        let sigma = (theta[0] + theta[1] * ls + theta[2] * m).exp();
        let y = gpd_survival_inverse(1.0 - rng.random::<f64>(), GpdParams::new(sigma, xi));
        d.push(y, &[1.0, ls, m]);
    }
    d
}

/// Responses whose τ-quantile is exactly the linear predictor of `form`:
/// y = x'β + ε with ε ~ N(0, 1) shifted to have τ-quantile zero. q_c is
/// drawn on [10, 25] and M^I on [−1, 1].
pub fn planted_body_design<R: Rng>(form: BodyForm, betas: &[f64], tau: f64, n: usize, rng: &mut R) -> Design {
    let shift = std_normal_quantile(tau);
    let mut d = Design::new(form.n_coef());
    for _ in 0..n {
        let q_c = rng.random_range(10.0..25.0);
        let m = rng.random_range(-1.0..1.0);
        let row = form.row(q_c, m);
        let mean: f64 = row.iter().zip(betas).map(|(a, b)| a * b).sum();
        let e = rng.sample::<f64, _>(StandardNormal) - shift;
        d.push(mean + e, &row);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stats::ks_test;

    fn small() -> SynthSpec {
        SynthSpec {
            n_stations: 6,
            grid_nx: 3,
            grid_ny: 3,
            n_years: 3,
            ..Default::default()
        }
    }

    #[test]
    fn truth_margin_is_continuous_and_inverts() {
        let m = TruthMargin::new(15.0, 3.0, GpdParams::new(1.4, -0.15));
        assert!((m.cdf(m.u) - TRUTH_THRESHOLD_TAU).abs() < 1e-8);
        assert!((m.cdf(m.u) - (1.0 - m.lambda)).abs() < 1e-15);
        assert!((m.cdf(m.u + 1e-10) - m.cdf(m.u)).abs() < 1e-9);
        for p in [0.01, 0.5, 0.9, 0.95, 0.9999] {
            assert!((m.cdf(m.quantile(p)) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.stations.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.stations.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn single_site_without_missingness_follows_truth() {
        let spec = SynthSpec {
            n_stations: 1,
            grid_nx: 1,
            grid_ny: 1,
            n_years: 30,
            missing_rate: 0.0,
            covariates: CovariateTruth {
                m_i_start: 0.0,
                m_i_end: 0.0,
                noise_sd: 0.0,
            },
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.stations.observed_count(), 30 * SUMMER_DAYS as usize);
        let m = data.truth.station_margin(0, 0.0);
        let xs: Vec<f64> = data.stations.observed_entries().map(|e| e.2).collect();
        assert!(ks_test(&xs, |x| m.cdf(x)).p_value > 0.01);
    }

    #[test]
    fn coast_distance_positive() {
        let data = generate(&small()).unwrap();
        assert!(data.stations.sites.iter().chain(&data.grid.sites).all(|s| s.coast_dist >= 1.0));
    }

    #[test]
    fn planted_quantile_is_exact_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = planted_body_design(BodyForm::ClimMi, &[1.0, 0.9, 0.5], 0.8, 20_000, &mut rng);
        let below = (0..d.len())
            .filter(|&i| {
                let r = d.row(i);
                d.y[i] <= 1.0 + 0.9 * r[1] + 0.5 * r[2]
            })
            .count();
        assert!((below as f64 / d.len() as f64 - 0.8).abs() < 0.01);
    }
}

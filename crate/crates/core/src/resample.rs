//! Vector block bootstrap on the uniform scale, two-step bias correction of
//! the GPD shape, cross-validation folds and RMSE / CRPS scoring.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::Design;
use crate::covariates::SiteCovariates;
use crate::datastore::{DayIndex, StationPanel, TimeCovariates, SUMMER_DAYS};
use crate::error::{Error, Result};
use crate::margins::{LocalMargin, MarginalModel, Scale, StdPanel};
use crate::numeric::stats;
use crate::tail::{fit_obs_design, GpdRegressionOptions, ObsTailFit};

pub const DEFAULT_BLOCK_LENGTH: u32 = 5;
pub const MIN_BIAS_REPLICATES: usize = 100;
pub const N_FOLDS: usize = 90;
pub const ST_CLUSTERS: usize = 30;
pub const ST_GROUPS: usize = 3;
pub const MIN_SITE_YEAR_OBS: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub block_length: u32,
    pub n_replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        Self {
            block_length: DEFAULT_BLOCK_LENGTH,
            n_replicates: 500,
            seed: 1,
        }
    }
}

/// Resample whole cross-sections in blocks of consecutive summer days. Each
/// target block takes a random source summer and a random start within it;
/// the source mask is imposed on every replicate. A target entry whose
/// source entry is missing takes the nearest observed day of the same site
/// in the source summer, or a random observed value of that site if the
/// site has none that summer.
pub fn block_bootstrap(std: &StdPanel, plan: &BootstrapPlan) -> Result<Vec<StdPanel>> {
    if std.scale != Scale::Uniform {
        return Err(Error::InvalidInput("block bootstrap needs a uniform-scale panel".into()));
    }
    if plan.block_length == 0 || plan.block_length > SUMMER_DAYS {
        return Err(Error::InvalidInput(format!(
            "block length {} outside [1, {SUMMER_DAYS}]",
            plan.block_length
        )));
    }
    let panel = &std.panel;
    let years: Vec<i32> = panel.rows_by_year().into_keys().collect();
    if years.is_empty() {
        return Err(Error::InvalidInput("panel has no rows".into()));
    }
    let rows: HashMap<DayIndex, usize> = panel.times.iter().enumerate().map(|(t, &d)| (d, t)).collect();
    let n = panel.n_sites();
    let site_pool: Vec<Vec<f64>> = (0..n)
        .map(|s| (0..panel.n_times()).filter_map(|t| panel.get(t, s)).collect())
        .collect();

    (0..plan.n_replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(r as u64);
            // source day for every (target year, day of summer)
            let mut source: HashMap<(i32, u32), DayIndex> = HashMap::new();
            for &year in &years {
                let mut d0 = 0;
                while d0 < SUMMER_DAYS {
                    let src_year = years[rng.random_range(0..years.len())];
                    let start = rng.random_range(0..=SUMMER_DAYS - plan.block_length);
                    for k in 0..plan.block_length.min(SUMMER_DAYS - d0) {
                        source.insert((year, d0 + k), DayIndex { year: src_year, day: start + k });
                    }
                    d0 += plan.block_length;
                }
            }
            let mut values = vec![f64::NAN; panel.values.len()];
            for (t, d) in panel.times.iter().enumerate() {
                let src = source[&(d.year, d.day)];
                for s in 0..n {
                    if !panel.observed[panel.index(t, s)] {
                        continue;
                    }
                    values[panel.index(t, s)] = fill_value(panel, &rows, &site_pool, src, s, &mut rng);
                }
            }
            Ok(StdPanel {
                panel: panel.with_values(values),
                scale: Scale::Uniform,
            })
        })
        .collect()
}

fn fill_value(
    panel: &StationPanel,
    rows: &HashMap<DayIndex, usize>,
    site_pool: &[Vec<f64>],
    src: DayIndex,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if let Some(v) = rows.get(&src).and_then(|&t| panel.get(t, s)) {
        return v;
    }
    for offset in 1..SUMMER_DAYS as i64 {
        for day in [src.day as i64 - offset, src.day as i64 + offset] {
            if !(0..SUMMER_DAYS as i64).contains(&day) {
                continue;
            }
            let key = DayIndex {
                year: src.year,
                day: day as u32,
            };
            if let Some(v) = rows.get(&key).and_then(|&t| panel.get(t, s)) {
                return v;
            }
        }
    }
    let pool = &site_pool[s];
    pool[rng.random_range(0..pool.len())]
}

/// Result of the two-step bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasCorrection {
    /// Shift added to every replicate shape.
    pub shift: f64,
    pub fits: Vec<ObsTailFit>,
    /// Replicates whose constrained re-fit failed.
    pub dropped: usize,
}

/// Shift every replicate ξ by the difference between the full-data estimate
/// and the replicate mean, then re-estimate the scale coefficients with ξ
/// held at its shifted value. Each replicate carries its own excess design.
pub fn bias_correct(replicates: &[(Design, ObsTailFit)], full: &ObsTailFit) -> Result<BiasCorrection> {
    if replicates.len() < MIN_BIAS_REPLICATES {
        return Err(Error::InvalidInput(format!(
            "bias correction needs at least {MIN_BIAS_REPLICATES} replicates, got {}",
            replicates.len()
        )));
    }
    let xis: Vec<f64> = replicates.iter().map(|(_, f)| f.xi_o).collect();
    let shift = full.xi_o - stats::mean(&xis);
    let results: Vec<Result<ObsTailFit>> = replicates
        .par_iter()
        .map(|(design, fit)| {
            let xi = fit.xi_o + shift;
            let opts = GpdRegressionOptions {
                fixed_xi: Some(xi),
                start: Some((fit.theta.clone(), xi)),
                ..Default::default()
            };
            fit_obs_design(design, fit.model_id, fit.clim_scale_link, None, opts)
        })
        .collect();
    let mut fits = Vec::with_capacity(results.len());
    let mut dropped = 0;
    for r in results {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => {
                log::warn!("bias-corrected re-fit dropped: {e}");
                dropped += 1;
            }
        }
    }
    Ok(BiasCorrection { shift, fits, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldKind {
    K90,
    St,
}

impl std::str::FromStr for FoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "90" | "k90" | "K90" => Ok(FoldKind::K90),
            "st" | "ST" => Ok(FoldKind::St),
            _ => Err(Error::InvalidInput(format!("unknown fold kind `{s}`"))),
        }
    }
}

/// Fold membership of every panel entry (`None` where unobserved).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub kind: FoldKind,
    pub n_folds: usize,
    pub assignments: Vec<Option<u8>>,
    /// Fold ids that received no entries.
    pub empty_folds: Vec<usize>,
}

impl FoldSpec {
    /// Observed entry indices per fold.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_folds];
        for (i, a) in self.assignments.iter().enumerate() {
            if let Some(f) = a {
                out[*f as usize].push(i);
            }
        }
        out
    }
}

/// Temporal group of a summer day for ST folds (7-day windows, every third).
pub fn st_group(day: DayIndex) -> usize {
    day.week() as usize % ST_GROUPS
}

pub fn make_folds(panel: &StationPanel, coords: &[[f64; 2]], kind: FoldKind, seed: u64) -> Result<FoldSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![None; panel.values.len()];
    match kind {
        FoldKind::K90 => {
            let mut entries: Vec<usize> = (0..panel.values.len()).filter(|&i| panel.observed[i]).collect();
            entries.shuffle(&mut rng);
            for (rank, i) in entries.into_iter().enumerate() {
                assignments[i] = Some((rank % N_FOLDS) as u8);
            }
        }
        FoldKind::St => {
            if panel.n_sites() < ST_CLUSTERS {
                return Err(Error::InvalidInput(format!(
                    "ST folds need at least {ST_CLUSTERS} sites, got {}",
                    panel.n_sites()
                )));
            }
            let cluster = kmeans(coords, ST_CLUSTERS, &mut rng);
            for (t, s, _) in panel.observed_entries() {
                let f = cluster[s] * ST_GROUPS + st_group(panel.times[t]);
                assignments[panel.index(t, s)] = Some(f as u8);
            }
        }
    }
    let mut counts = vec![0usize; N_FOLDS];
    for f in assignments.iter().flatten() {
        counts[*f as usize] += 1;
    }
    let empty_folds: Vec<usize> = (0..N_FOLDS).filter(|&f| counts[f] == 0).collect();
    if !empty_folds.is_empty() {
        log::warn!("{} cross-validation folds are empty: {:?}", empty_folds.len(), empty_folds);
    }
    Ok(FoldSpec {
        kind,
        n_folds: N_FOLDS,
        assignments,
        empty_folds,
    })
}

/// Lloyd's k-means with k-means++ seeding; clusters left empty are re-seeded
/// at the point farthest from its centre.
pub fn kmeans<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<usize> {
    let d2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    while centres.len() < k {
        let w: Vec<f64> = points
            .iter()
            .map(|&p| centres.iter().map(|&c| d2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = w.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    pick = i;
                    break;
                }
                u -= wi;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centres.push(points[next]);
    }
    let nearest = |p: [f64; 2], centres: &[[f64; 2]]| {
        (0..centres.len())
            .min_by(|&a, &b| d2(p, centres[a]).total_cmp(&d2(p, centres[b])))
            .unwrap_or(0)
    };
    let mut labels: Vec<usize> = points.iter().map(|&p| nearest(p, &centres)).collect();
    for _ in 0..300 {
        let mut sums = vec![[0.0, 0.0, 0.0]; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            sums[l][2] += 1.0;
        }
        for c in 0..k {
            if sums[c][2] > 0.0 {
                centres[c] = [sums[c][0] / sums[c][2], sums[c][1] / sums[c][2]];
            } else {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        d2(points[a], centres[labels[a]]).total_cmp(&d2(points[b], centres[labels[b]]))
                    })
                    .unwrap_or(0);
                centres[c] = points[far];
                labels[far] = c;
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest(p, &centres)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// CRPS of a piecewise-linear predictive CDF through `(x, F)` knots
/// (non-decreasing in both), with F = 0 left of the first knot and F = 1
/// right of the last. The integral is exact for that interpolant.
pub fn crps_piecewise(knots: &[(f64, f64)], obs: f64) -> f64 {
    let Some(&(x_first, _)) = knots.first() else {
        return f64::NAN;
    };
    let x_last = knots[knots.len() - 1].0;
    let mut total = 0.0;
    if obs < x_first {
        total += x_first - obs;
    }
    if obs > x_last {
        total += obs - x_last;
    }
    // ∫ over a segment of a linear g from g0 to g1
    let seg = |dx: f64, g0: f64, g1: f64| dx * (g0 * g0 + g0 * g1 + g1 * g1) / 3.0;
    for w in knots.windows(2) {
        let ((x0, f0), (x1, f1)) = (w[0], w[1]);
        let dx = x1 - x0;
        if dx <= 0.0 {
            continue;
        }
        if obs <= x0 {
            total += seg(dx, f0 - 1.0, f1 - 1.0);
        } else if obs >= x1 {
            total += seg(dx, f0, f1);
        } else {
            let fo = f0 + (f1 - f0) * (obs - x0) / dx;
            total += seg(obs - x0, f0, fo) + seg(x1 - obs, fo - 1.0, f1 - 1.0);
        }
    }
    total
}

/// Probability levels of the CRPS grid: 0.001, 0.003, ..., 0.999.
pub fn crps_tau_grid() -> Vec<f64> {
    (0..500).map(|k| 0.001 + 0.002 * k as f64).collect()
}

/// Knots of a predictive distribution for CRPS: quantiles on the τ grid
/// plus 20 tail points with exceedance probabilities from 1e-3 down to 1e-7
/// (or the finite endpoint). Mass beyond the last knot is truncated.
pub fn crps_knots(margin: &LocalMargin) -> Vec<(f64, f64)> {
    let mut knots: Vec<(f64, f64)> = crps_tau_grid().into_iter().map(|p| (margin.quantile(p), p)).collect();
    let endpoint = margin.endpoint();
    for k in 1..=20 {
        let surv = 1e-3 * 10f64.powf(-4.0 * k as f64 / 20.0);
        let x = margin.quantile_survival(surv);
        if x >= endpoint {
            break;
        }
        knots.push((x, 1.0 - surv));
    }
    if endpoint.is_finite() {
        knots.push((endpoint, 1.0));
    }
    // numerical ties from the spline or the tail join
    for i in 1..knots.len() {
        if knots[i].0 < knots[i - 1].0 {
            knots[i].0 = knots[i - 1].0;
        }
    }
    knots
}

pub fn crps(margin: &LocalMargin, obs: f64) -> f64 {
    crps_piecewise(&crps_knots(margin), obs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub n_obs: usize,
    pub n_site_years: usize,
    pub rmse: f64,
    pub crps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvScore {
    pub kind: FoldKind,
    pub rmse: f64,
    pub crps: f64,
    pub folds: Vec<FoldScore>,
}

/// Score held-out entries of `panel` against a fitted margin: RMSE between
/// type-7 site-year quantiles and the model quantiles at the site-year mean
/// M^I (site-years with at least 10 held-out values), and mean CRPS over all
/// held-out values.
pub fn score(
    panel: &StationPanel,
    held_out: &[usize],
    model: &MarginalModel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    taus: &[f64],
) -> Result<(f64, f64, usize)> {
    let n = panel.n_sites();
    let mut crps_sum = 0.0;
    let mut groups: HashMap<(usize, i32), Vec<(usize, f64)>> = HashMap::new();
    for &i in held_out {
        let (t, s) = (i / n, i % n);
        let Some(x) = panel.get(t, s) else {
            continue;
        };
        let m = model.at(&sites[s], &time_covs[t])?;
        crps_sum += crps(&m, x);
        groups.entry((s, panel.times[t].year)).or_default().push((t, x));
    }
    let n_obs: usize = groups.values().map(Vec::len).sum();
    let mut keys: Vec<&(usize, i32)> = groups.keys().collect();
    keys.sort();
    let (mut sq, mut count, mut site_years) = (0.0, 0usize, 0usize);
    for key in keys {
        let entries = &groups[key];
        if entries.len() < MIN_SITE_YEAR_OBS {
            continue;
        }
        site_years += 1;
        let xs: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let emp = stats::quantiles(&xs, taus).expect("non-empty");
        let m_i = entries.iter().map(|e| time_covs[e.0].m_i).sum::<f64>() / entries.len() as f64;
        let tc = TimeCovariates {
            m_i,
            ..time_covs[entries[0].0]
        };
        let m = model.at(&sites[key.0], &tc)?;
        for (k, &tau) in taus.iter().enumerate() {
            sq += (emp[k] - m.quantile(tau)).powi(2);
            count += 1;
        }
    }
    let rmse = if count > 0 { (sq / count as f64).sqrt() } else { f64::NAN };
    let crps = if n_obs > 0 { crps_sum / n_obs as f64 } else { f64::NAN };
    Ok((rmse, crps, site_years))
}

/// Panel with the given entries masked out (rows kept so covariates stay aligned).
pub fn mask_entries(panel: &StationPanel, entries: &[usize]) -> StationPanel {
    let mut out = panel.clone();
    for &i in entries {
        out.observed[i] = false;
        out.values[i] = f64::NAN;
    }
    out
}

/// Cross-validate a fitting procedure over a fold spec. `fit` receives the
/// training panel (held-out entries masked) and returns a marginal model.
pub fn cross_validate<F>(
    panel: &StationPanel,
    folds: &FoldSpec,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    taus: &[f64],
    fit: F,
) -> Result<CvScore>
where
    F: Fn(&StationPanel) -> Result<MarginalModel> + Sync,
{
    let members = folds.members();
    let scores: Vec<FoldScore> = members
        .par_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(f, held)| {
            let train = mask_entries(panel, held);
            let model = fit(&train)?;
            let (rmse, crps, n_site_years) = score(panel, held, &model, sites, time_covs, taus)?;
            Ok(FoldScore {
                fold: f,
                n_obs: held.len(),
                n_site_years,
                rmse,
                crps,
            })
        })
        .collect::<Result<_>>()?;
    let avg = |f: &dyn Fn(&FoldScore) -> f64| {
        let v: Vec<f64> = scores.iter().map(f).filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            stats::mean(&v)
        }
    };
    Ok(CvScore {
        kind: folds.kind,
        rmse: avg(&|s| s.rmse),
        crps: avg(&|s| s.crps),
        folds: scores,
    })
}

//! Extremal dependence: empirical χ clouds with bootstrap bands, the Matérn
//! variogram, Brown–Resnick fits by weighted least squares on binned χ, and
//! the mean-over-observed-sites risk functional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::datastore::{distance, StationPanel};
use crate::error::{Error, Result};
use crate::numeric::optim::{brent_bounded, nelder_mead, NelderMeadOptions};
use crate::numeric::stats::{self, std_normal_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramParams {
    /// Sill.
    pub alpha: f64,
    /// Range (km).
    pub phi: f64,
    /// Smoothness.
    pub nu: f64,
}

impl VariogramParams {
    pub fn new(alpha: f64, phi: f64, nu: f64) -> Self {
        Self { alpha, phi, nu }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha >= 0.0 && self.phi > 0.0 && self.nu > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid variogram parameters {self:?}")))
        }
    }
}

/// Matérn variogram
/// γ(h) = α {1 − (2√ν h/φ)^ν 2^(1−ν) Γ(ν)⁻¹ K_ν(2√ν h/φ)}.
pub fn matern_variogram(h: f64, v: &VariogramParams) -> f64 {
    if h <= 0.0 || v.alpha == 0.0 {
        return 0.0;
    }
    let z = 2.0 * v.nu.sqrt() * h / v.phi;
    if z > 600.0 {
        return v.alpha;
    }
    if z < 1e-12 {
        return 0.0;
    }
    let (_, k) = puruspe::Inu_Knu(v.nu, z);
    let log_corr = v.nu * z.ln() + (1.0 - v.nu) * std::f64::consts::LN_2 - ln_gamma(v.nu) + k.ln();
    let corr = if k > 0.0 { log_corr.exp().min(1.0) } else { 0.0 };
    v.alpha * (1.0 - corr)
}

/// Brown–Resnick extremal coefficient χ(h) = 2 − 2Φ(√γ(h)/2).
pub fn br_chi(h: f64, v: &VariogramParams) -> f64 {
    2.0 - 2.0 * std_normal_cdf(matern_variogram(h, v).sqrt() / 2.0)
}

/// χ for a given variogram value.
pub fn chi_from_gamma(gamma: f64) -> f64 {
    2.0 - 2.0 * std_normal_cdf(gamma.max(0.0).sqrt() / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairChi {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub chi: f64,
    /// Co-observed days.
    pub n_days: u32,
    /// Marginal exceedances at i and j on co-observed days.
    pub n_i: u32,
    pub n_j: u32,
    pub joint: u32,
    /// Bootstrap variance of the pair estimate.
    pub var: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBin {
    pub h_mean: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub n_pairs: usize,
    pub chi: f64,
    pub var: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiCloud {
    pub p: f64,
    pub v_p: f64,
    pub pairs: Vec<PairChi>,
    pub bins: Vec<ChiBin>,
    /// Pairs without any conditioning exceedance.
    pub excluded_pairs: usize,
    pub n_boot: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ChiOptions {
    pub p: f64,
    pub n_bins: usize,
    pub n_boot: usize,
    pub seed: u64,
}

// Exceedance counts of one site pair, per resampling cell.
struct PairCounts {
    i: usize,
    j: usize,
    h: f64,
    n_days: u32,
    /// (cell, n_i, n_j, joint) for cells with any exceedance.
    cells: Vec<(u32, u32, u32, u32)>,
}

impl PairCounts {
    fn chi(&self, mult: Option<&[u32]>, n_groups: usize, group: Option<usize>) -> f64 {
        let (mut a, mut b, mut c) = (0u64, 0u64, 0u64);
        for &(cell, ni, nj, joint) in &self.cells {
            let cell = cell as usize;
            if let Some(g) = group {
                if cell % n_groups != g {
                    continue;
                }
            }
            let m = mult.map_or(1, |m| m[cell / n_groups]) as u64;
            if m == 0 {
                continue;
            }
            a += m * ni as u64;
            b += m * nj as u64;
            c += m * joint as u64;
        }
        if a + b == 0 {
            f64::NAN
        } else {
            2.0 * c as f64 / (a + b) as f64
        }
    }
}

// Resampling blocks are summers; cells subdivide blocks by time group.
fn block_ids(panel: &StationPanel) -> (Vec<usize>, usize) {
    let mut ids = Vec::with_capacity(panel.n_times());
    let mut years: Vec<i32> = Vec::new();
    for d in &panel.times {
        if years.last() != Some(&d.year) {
            years.push(d.year);
        }
        ids.push(years.len() - 1);
    }
    (ids, years.len())
}

fn pair_counts(
    panel: &StationPanel,
    coords: &[[f64; 2]],
    v_p: f64,
    cell_of_row: &[usize],
    n_cells: usize,
) -> Vec<PairCounts> {
    let n = panel.n_sites();
    let nt = panel.n_times();
    // per-site columns: 0 unobserved, 1 observed below, 2 observed above
    let cols: Vec<Vec<u8>> = (0..n)
        .map(|s| {
            (0..nt)
                .map(|t| match panel.get(t, s) {
                    None => 0,
                    Some(x) if x > v_p => 2,
                    Some(_) => 1,
                })
                .collect()
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut dense = vec![[0u32; 3]; n_cells];
            let mut n_days = 0;
            let (ci, cj) = (&cols[i], &cols[j]);
            for t in 0..nt {
                let (a, b) = (ci[t], cj[t]);
                if a == 0 || b == 0 {
                    continue;
                }
                n_days += 1;
                if a == 2 || b == 2 {
                    let d = &mut dense[cell_of_row[t]];
                    d[0] += (a == 2) as u32;
                    d[1] += (b == 2) as u32;
                    d[2] += (a == 2 && b == 2) as u32;
                }
            }
            let cells = dense
                .iter()
                .enumerate()
                .filter(|(_, d)| d[0] + d[1] > 0)
                .map(|(c, d)| (c as u32, d[0], d[1], d[2]))
                .collect();
            PairCounts {
                i,
                j,
                h: distance(coords[i], coords[j]),
                n_days,
                cells,
            }
        })
        .collect()
}

fn multiplicities(n_blocks: usize, seed: u64, rep: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    let mut m = vec![0u32; n_blocks];
    for _ in 0..n_blocks {
        m[rng.random_range(0..n_blocks)] += 1;
    }
    m
}

const PAIR_VAR_FLOOR: f64 = 1e-8;

fn bin_estimate(pair_chi: &[f64], weights: &[f64], members: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &k in members {
        if pair_chi[k].is_finite() {
            num += weights[k] * pair_chi[k];
            den += weights[k];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

/// Split pair indices, sorted by distance, into `n_bins` groups of equal size
/// (sizes differ by at most one).
fn equal_count_bins(h: &[f64], n_bins: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| h[a].total_cmp(&h[b]).then(a.cmp(&b)));
    let n_bins = n_bins.min(order.len()).max(1);
    let base = order.len() / n_bins;
    let extra = order.len() % n_bins;
    let mut out = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let len = base + usize::from(b < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Pairwise conditional-exceedance estimates on unit-Pareto data, binned by
/// distance with bootstrap (resampling whole summers) variances and
/// percentile intervals.
pub fn chi_empirical(panel: &StationPanel, coords: &[[f64; 2]], opts: &ChiOptions) -> Result<ChiCloud> {
    if !(opts.p > 0.5 && opts.p < 1.0) {
        return Err(Error::InvalidInput(format!("p = {} outside (0.5, 1)", opts.p)));
    }
    if opts.n_bins == 0 {
        return Err(Error::InvalidInput("need at least one bin".into()));
    }
    if coords.len() != panel.n_sites() {
        return Err(Error::InvalidInput("coordinates do not match panel sites".into()));
    }
    let v_p = 1.0 / (1.0 - opts.p);
    let (blocks, n_blocks) = block_ids(panel);
    let counts = pair_counts(panel, coords, v_p, &blocks, n_blocks);
    let total_pairs = counts.len();
    let counts: Vec<PairCounts> = counts
        .into_iter()
        .filter(|c| c.cells.iter().any(|&(_, a, b, _)| a + b > 0))
        .collect();
    let excluded_pairs = total_pairs - counts.len();
    if counts.is_empty() {
        return Err(Error::InvalidInput("no site pair has a conditioning exceedance".into()));
    }
    let chi: Vec<f64> = counts.iter().map(|c| c.chi(None, 1, None)).collect();
    let h: Vec<f64> = counts.iter().map(|c| c.h).collect();
    let bins = equal_count_bins(&h, opts.n_bins);

    // pass 1: pair variances
    let np = counts.len();
    let mut var = vec![0.0; np];
    if opts.n_boot >= 2 {
        let mut sum = vec![0.0; np];
        let mut sum2 = vec![0.0; np];
        let mut cnt = vec![0usize; np];
        for rep in 0..opts.n_boot {
            let mult = multiplicities(n_blocks, opts.seed, rep);
            let rc: Vec<f64> = counts.par_iter().map(|c| c.chi(Some(&mult), 1, None)).collect();
            for k in 0..np {
                if rc[k].is_finite() {
                    sum[k] += rc[k];
                    sum2[k] += rc[k] * rc[k];
                    cnt[k] += 1;
                }
            }
        }
        for k in 0..np {
            if cnt[k] >= 2 {
                let m = sum[k] / cnt[k] as f64;
                var[k] = ((sum2[k] - cnt[k] as f64 * m * m) / (cnt[k] - 1) as f64).max(0.0);
            }
        }
    }
    let weights: Vec<f64> = if opts.n_boot >= 2 {
        var.iter().map(|v| 1.0 / v.max(PAIR_VAR_FLOOR)).collect()
    } else {
        counts.iter().map(|c| f64::from(c.n_days)).collect()
    };

    // pass 2: replicate bin estimates with fixed weights
    let mut bin_reps: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.n_boot); bins.len()];
    if opts.n_boot >= 2 {
        for rep in 0..opts.n_boot {
            let mult = multiplicities(n_blocks, opts.seed, rep);
            let rc: Vec<f64> = counts.par_iter().map(|c| c.chi(Some(&mult), 1, None)).collect();
            for (b, members) in bins.iter().enumerate() {
                let e = bin_estimate(&rc, &weights, members);
                if e.is_finite() {
                    bin_reps[b].push(e);
                }
            }
        }
    }

    let mut pairs: Vec<PairChi> = Vec::with_capacity(np);
    let mut bin_of = vec![0; np];
    for (b, members) in bins.iter().enumerate() {
        for &k in members {
            bin_of[k] = b;
        }
    }
    for (k, c) in counts.iter().enumerate() {
        let (mut a, mut bb, mut j) = (0, 0, 0);
        for &(_, x, y, z) in &c.cells {
            a += x;
            bb += y;
            j += z;
        }
        pairs.push(PairChi {
            i: c.i,
            j: c.j,
            h: c.h,
            chi: chi[k],
            n_days: c.n_days,
            n_i: a,
            n_j: bb,
            joint: j,
            var: var[k],
            bin: bin_of[k],
        });
    }
    let bins_out = bins
        .iter()
        .zip(&bin_reps)
        .map(|(members, reps)| {
            let hs: Vec<f64> = members.iter().map(|&k| h[k]).collect();
            let (lo, hi, v) = if reps.len() >= 2 {
                let q = stats::quantiles(reps, &[0.025, 0.975]).expect("non-empty");
                (q[0], q[1], stats::variance(reps))
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            ChiBin {
                h_mean: stats::mean(&hs),
                h_min: hs.iter().copied().fold(f64::INFINITY, f64::min),
                h_max: hs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                n_pairs: members.len(),
                chi: bin_estimate(&chi, &weights, members),
                var: v,
                ci_lo: lo,
                ci_hi: hi,
            }
        })
        .collect();
    Ok(ChiCloud {
        p: opts.p,
        v_p,
        pairs,
        bins: bins_out,
        excluded_pairs,
        n_boot: opts.n_boot,
    })
}

/// Weighted least-squares fit of the Brown–Resnick χ to a binned cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub params: VariogramParams,
    pub objective: f64,
    pub evaluations: usize,
    /// Fitted ν above 10 (over-smooth).
    pub nu_flagged: bool,
}

pub const NU_FLAG: f64 = 10.0;
const BIN_VAR_FLOOR: f64 = 1e-10;

// Pair-level weights and bin-level weights used by the objective.
struct FitData {
    h: Vec<f64>,
    pair_w: Vec<f64>,
    bins: Vec<Vec<usize>>,
    target: Vec<f64>,
    bin_w: Vec<f64>,
}

impl FitData {
    fn from_cloud(cloud: &ChiCloud) -> Self {
        let h: Vec<f64> = cloud.pairs.iter().map(|p| p.h).collect();
        let pair_w: Vec<f64> = if cloud.n_boot >= 2 {
            cloud.pairs.iter().map(|p| 1.0 / p.var.max(PAIR_VAR_FLOOR)).collect()
        } else {
            cloud.pairs.iter().map(|p| f64::from(p.n_days)).collect()
        };
        let mut bins = vec![Vec::new(); cloud.bins.len()];
        for (k, p) in cloud.pairs.iter().enumerate() {
            bins[p.bin].push(k);
        }
        let target = cloud.bins.iter().map(|b| b.chi).collect();
        let vars: Vec<f64> = cloud.bins.iter().map(|b| b.var).collect();
        let bin_w = if vars.iter().all(|v| v.is_finite()) {
            vars.iter().map(|v| 1.0 / v.max(BIN_VAR_FLOOR)).collect()
        } else {
            vec![1.0; vars.len()]
        };
        Self {
            h,
            pair_w,
            bins,
            target,
            bin_w,
        }
    }

    // Expected bin estimate: the same weighted average of the model χ over
    // the bin's pairs.
    fn model_bins(&self, v: &VariogramParams) -> Vec<f64> {
        self.bins
            .iter()
            .map(|members| {
                let (mut num, mut den) = (0.0, 0.0);
                for &k in members {
                    num += self.pair_w[k] * br_chi(self.h[k], v);
                    den += self.pair_w[k];
                }
                num / den
            })
            .collect()
    }

    fn objective(&self, v: &VariogramParams) -> f64 {
        self.model_bins(v)
            .iter()
            .zip(&self.target)
            .zip(&self.bin_w)
            .filter(|((_, t), _)| t.is_finite())
            .map(|((m, t), w)| w * (m - t).powi(2))
            .sum()
    }
}

const LN_ALPHA: (f64, f64) = (-20.0, 5.0);
const LN_NU: (f64, f64) = (-3.0, 4.0);

fn unpack(x: &[f64], h_scale: f64) -> Option<VariogramParams> {
    let ln_phi = (h_scale * 1e-3).ln()..=(h_scale * 1e3).ln();
    if !(LN_ALPHA.0..=LN_ALPHA.1).contains(&x[0]) || !ln_phi.contains(&x[1]) || !(LN_NU.0..=LN_NU.1).contains(&x[2]) {
        return None;
    }
    Some(VariogramParams::new(x[0].exp(), x[1].exp(), x[2].exp()))
}

/// Fit (α, φ, ν) by minimizing the inverse-variance-weighted squared error
/// between binned χ̃ and 2 − 2Φ(√γ(h)/2), over log parameters with
/// multi-start simplex search.
pub fn fit_variogram(cloud: &ChiCloud) -> Result<VariogramFit> {
    let data = FitData::from_cloud(cloud);
    let h_scale = stats::mean(&data.h).max(1e-6);
    let f = |x: &[f64]| match unpack(x, h_scale) {
        Some(v) => data.objective(&v),
        None => f64::INFINITY,
    };
    let mut starts = Vec::new();
    for a in [0.5f64, 2.0] {
        for p in [0.5 * h_scale, 2.0 * h_scale] {
            for n in [0.5f64, 1.5] {
                starts.push(vec![a.ln(), p.ln(), n.ln()]);
            }
        }
    }
    let opts = NelderMeadOptions {
        max_evaluations: 6000,
        f_tol: 1e-14,
        x_tol: 1e-8,
        restarts: 3,
        initial_step: 0.3,
    };
    let results: Vec<_> = starts.par_iter().map(|s| nelder_mead(f, s, &opts)).collect();
    let evaluations = results.iter().map(|r| r.evaluations).sum();
    let best = results
        .into_iter()
        .min_by(|a, b| a.fx.total_cmp(&b.fx))
        .expect("starts non-empty");
    if !best.fx.is_finite() {
        return Err(Error::NonConvergence {
            iterations: evaluations,
            last: best.x,
            grad_norm: f64::NAN,
        });
    }
    let params = unpack(&best.x, h_scale).expect("finite objective implies admissible point");
    let nu_flagged = params.nu > NU_FLAG;
    if nu_flagged {
        log::warn!("fitted smoothness ν = {:.3} exceeds {NU_FLAG}: over-smooth variogram", params.nu);
    }
    Ok(VariogramFit {
        params,
        objective: best.fx,
        evaluations,
        nu_flagged,
    })
}

/// Log-linear time variation of the sill, α_t = exp(a0 + a1 M^I(t)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVariation {
    pub a0: f64,
    pub a1: f64,
    pub a1_ci: (f64, f64),
    pub significant: bool,
    pub group_m_i: Vec<f64>,
    pub group_alpha: Vec<f64>,
}

/// Fit the sill separately on days split into `n_groups` groups by M^I
/// quantiles (range and smoothness fixed at the pooled fit), then regress
/// log α on the group mean M^I. The interval for a1 is a bootstrap
/// percentile interval resampling whole summers.
pub fn fit_time_variation(
    panel: &StationPanel,
    coords: &[[f64; 2]],
    m_i: &[f64],
    pooled: &VariogramParams,
    cloud: &ChiCloud,
    n_groups: usize,
    seed: u64,
) -> Result<TimeVariation> {
    if n_groups < 2 || m_i.len() != panel.n_times() {
        return Err(Error::InvalidInput("time split needs ≥ 2 groups and covariates per row".into()));
    }
    let cuts = stats::quantiles(
        m_i,
        &(1..n_groups).map(|g| g as f64 / n_groups as f64).collect::<Vec<_>>(),
    )
    .expect("non-empty");
    let group_of: Vec<usize> = m_i.iter().map(|&m| cuts.iter().filter(|&&c| m > c).count()).collect();
    let mut group_m_i = vec![0.0; n_groups];
    let mut group_n = vec![0usize; n_groups];
    for (&g, &m) in group_of.iter().zip(m_i) {
        group_m_i[g] += m;
        group_n[g] += 1;
    }
    if group_n.contains(&0) {
        return Err(Error::InvalidInput("empty covariate group in time split".into()));
    }
    for g in 0..n_groups {
        group_m_i[g] /= group_n[g] as f64;
    }
    let (blocks, n_blocks) = block_ids(panel);
    let cell_of_row: Vec<usize> = blocks.iter().zip(&group_of).map(|(b, g)| b * n_groups + g).collect();
    let counts = pair_counts(panel, coords, cloud.v_p, &cell_of_row, n_blocks * n_groups);
    // align to the pooled cloud's retained pairs
    let index: std::collections::HashMap<(usize, usize), usize> =
        counts.iter().enumerate().map(|(k, c)| ((c.i, c.j), k)).collect();
    let data = FitData::from_cloud(cloud);
    let members: Vec<usize> = cloud.pairs.iter().map(|p| index[&(p.i, p.j)]).collect();

    let estimate = |mult: Option<&[u32]>| -> Option<(f64, f64, Vec<f64>)> {
        let mut alphas = Vec::with_capacity(n_groups);
        for g in 0..n_groups {
            let rc: Vec<f64> = members.iter().map(|&k| counts[k].chi(mult, n_groups, Some(g))).collect();
            let target: Vec<f64> = data.bins.iter().map(|m| bin_estimate(&rc, &data.pair_w, m)).collect();
            let obj = |la: f64| {
                let v = VariogramParams::new(la.exp(), pooled.phi, pooled.nu);
                data.model_bins(&v)
                    .iter()
                    .zip(&target)
                    .zip(&data.bin_w)
                    .filter(|((_, t), _)| t.is_finite())
                    .map(|((m, t), w)| w * (m - t).powi(2))
                    .sum::<f64>()
            };
            let r = brent_bounded(obj, LN_ALPHA.0, LN_ALPHA.1, 1e-8);
            alphas.push(r.x.exp());
        }
        let y: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
        let mx = stats::mean(&group_m_i);
        let my = stats::mean(&y);
        let sxx: f64 = group_m_i.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx <= 0.0 {
            return None;
        }
        let a1 = group_m_i.iter().zip(&y).map(|(x, yy)| (x - mx) * (yy - my)).sum::<f64>() / sxx;
        Some((my - a1 * mx, a1, alphas))
    };
    let (a0, a1, group_alpha) =
        estimate(None).ok_or_else(|| Error::InvalidInput("covariate groups share one mean".into()))?;
    let reps: Vec<f64> = (0..cloud.n_boot)
        .into_par_iter()
        .filter_map(|rep| {
            let mult = multiplicities(n_blocks, seed ^ 0x5eed_0001, rep);
            estimate(Some(&mult)).map(|e| e.1)
        })
        .collect();
    let a1_ci = if reps.len() >= 2 {
        let q = stats::quantiles(&reps, &[0.025, 0.975]).expect("non-empty");
        (q[0], q[1])
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(TimeVariation {
        a0,
        a1,
        a1_ci,
        significant: a1_ci.0 > 0.0 || a1_ci.1 < 0.0,
        group_m_i,
        group_alpha,
    })
}

/// Mean of the observed Pareto-scale values of one day, provided at least
/// `min_observed` sites are observed.
pub fn risk_value(values: &[f64], observed: &[bool], min_observed: usize) -> Option<f64> {
    let mut n = 0usize;
    let mut s = 0.0;
    for (&v, &o) in values.iter().zip(observed) {
        if o {
            n += 1;
            s += v;
        }
    }
    (n >= min_observed.max(1)).then(|| s / n as f64)
}

/// Risk values of every qualifying day as `(row, r_t)`. Days on which any
/// anchor site is unobserved are excluded.
pub fn risk_values(panel: &StationPanel, min_observed: usize, anchors: &[usize]) -> Vec<(usize, f64)> {
    (0..panel.n_times())
        .filter_map(|t| {
            let (vals, obs) = panel.row(t);
            if anchors.iter().any(|&a| !obs[a]) {
                return None;
            }
            risk_value(vals, obs, min_observed).map(|r| (t, r))
        })
        .collect()
}

pub const RISK_QUANTILE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskThreshold {
    pub v_r: f64,
    pub n_risks: usize,
    pub n_exceed: usize,
}

/// v_r: the type-7 0.8 sample quantile of the risk values.
pub fn risk_threshold(risks: &[f64]) -> Result<RiskThreshold> {
    let q = stats::quantiles(risks, &[RISK_QUANTILE])
        .ok_or_else(|| Error::InvalidInput("empty risk sample".into()))?[0];
    Ok(RiskThreshold {
        v_r: q,
        n_risks: risks.len(),
        n_exceed: risks.iter().filter(|&&r| r > q).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    #[default]
    MeanObserved,
}

/// Fitted r-Pareto dependence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceModel {
    pub vario: VariogramParams,
    pub v_r: f64,
    pub risk_kind: RiskKind,
    /// Probability level of the χ fit; NaN when not fitted from data.
    #[serde(deserialize_with = "crate::io::nan_or_f64")]
    pub p_fit: f64,
    pub min_observed: usize,
    pub n_risks: usize,
    pub n_exceed: usize,
    pub nu_flagged: bool,
    pub anchor_sites: Vec<String>,
    pub time_variation: Option<TimeVariation>,
}

impl DependenceModel {
    /// Model with given variogram and risk threshold and no fit metadata.
    pub fn from_variogram(vario: VariogramParams, v_r: f64) -> Result<Self> {
        vario.validate()?;
        if !(v_r >= 1.0) {
            return Err(Error::InvalidInput(format!("risk threshold {v_r} must be at least 1")));
        }
        Ok(Self {
            vario,
            v_r,
            risk_kind: RiskKind::MeanObserved,
            p_fit: f64::NAN,
            min_observed: 1,
            n_risks: 0,
            n_exceed: 0,
            nu_flagged: false,
            anchor_sites: Vec::new(),
            time_variation: None,
        })
    }

    /// Variogram at time covariate `m_i`; the sill varies only when a
    /// significant time variation was retained.
    pub fn vario_at(&self, m_i: f64) -> VariogramParams {
        match &self.time_variation {
            Some(tv) if tv.significant => {
                VariogramParams::new((tv.a0 + tv.a1 * m_i).exp(), self.vario.phi, self.vario.nu)
            }
            _ => self.vario,
        }
    }
}

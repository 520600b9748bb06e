//! Probabilities of spatial extreme events and derived heat-risk metrics.
//!
//! For an event A = {∃ s: X(s) > T} with Pareto-scale thresholds T^P(s),
//! the scaled importance estimator is
//!
//! P̂ = (1/(c m L)) Σ_i Σ_j 1{∃ s: r_j c w_i(s) > T^P(s)},
//!
//! with c = b = min_s T^P(s)/ω(s), ω(s) = max_i w_i(s). The factor 1/c is
//! Pr{r(X) > c} for the mean risk on unit-Pareto margins, so the
//! exceedance probability of the risk threshold v_r is absorbed into b
//! (b = v_r b_A). The indicator is evaluated as r_j > k_i with
//! k_i = min_s T^P(s)/(c w_i(s)) against the sorted auxiliary risks.
//! Since all profiles share the same L auxiliary risks, standard errors
//! combine the spread over profiles and over auxiliary risks.

use serde::{Deserialize, Serialize};

use crate::datastore::{distance, SUMMER_DAYS};
use crate::error::{Error, Result};
use crate::margins::LocalMargin;
use crate::numeric::stats;
use crate::simulator::SimBatch;
use crate::tail::gpd_survival_inverse;

pub const SE_BATCHES: usize = 50;

/// Level exceeded on a summer day with probability 1/(92·period).
pub fn marginal_return_level(margin: &LocalMargin, period_years: f64) -> Result<f64> {
    let surv = 1.0 / (f64::from(SUMMER_DAYS) * period_years);
    if surv >= margin.lambda {
        return Err(Error::BelowThreshold { prob: surv });
    }
    Ok(margin.u + gpd_survival_inverse(surv / margin.lambda, margin.gpd))
}

/// Return period in years of an event with daily probability `p`.
pub fn return_period(p: f64) -> f64 {
    1.0 / (f64::from(SUMMER_DAYS) * p)
}

/// Pareto-scale thresholds T^P(s) for a critical temperature; the
/// temperature must not lie below any site's threshold u(s).
pub fn threshold_on_pareto(temp: f64, margins: &[LocalMargin]) -> Result<Vec<f64>> {
    if let Some(m) = margins.iter().find(|m| temp < m.u) {
        return Err(Error::InvalidInput(format!(
            "critical temperature {temp} below threshold {:.3} at a site",
            m.u
        )));
    }
    Ok(margins.iter().map(|m| m.pareto_threshold(temp)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Result of the importance estimator at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub prob: Estimate,
    /// Optimal scaling b = min_s T^P(s)/ω(s).
    pub b: f64,
    /// Scale actually used.
    pub scale: f64,
    /// b ≤ v_r: the unscaled estimator (scale v_r) was used instead.
    pub fallback: bool,
    /// E(C): expected fraction of sites exceeding T.
    pub coverage: Estimate,
    /// E(C | A).
    pub coverage_given_event: Estimate,
    /// Σ_ij 1{A}, Σ_ij C over the m L scaled fields.
    pub n_event: f64,
    pub sum_coverage: f64,
}

/// Componentwise maximum ω(s) of the profiles.
pub fn max_profile(batch: &SimBatch) -> Vec<f64> {
    let n = batch.n_sites();
    let mut w = vec![0.0f64; n];
    for i in 0..batch.m {
        for (a, &b) in w.iter_mut().zip(batch.profile(i)) {
            *a = a.max(b);
        }
    }
    w
}

/// b = min_s T^P(s)/ω(s).
pub fn optimal_scale(batch: &SimBatch, tp: &[f64]) -> f64 {
    max_profile(batch)
        .iter()
        .zip(tp)
        .map(|(w, t)| t / w)
        .fold(f64::INFINITY, f64::min)
}

fn sorted_aux(batch: &SimBatch) -> Vec<f64> {
    let mut r = batch.aux_risks.clone();
    r.sort_by(f64::total_cmp);
    r
}

// Number of sorted values strictly greater than k.
#[inline]
fn count_above(sorted: &[f64], k: f64) -> usize {
    sorted.len() - sorted.partition_point(|&r| r <= k)
}

// Per-profile event and coverage counts over the auxiliary risks, plus
// the per-risk counts over profiles (event) and over profile-sites
// (coverage). Every profile is paired with the same auxiliary risks, so
// both margins of the m × L table carry sampling noise.
struct Counts {
    event: Vec<f64>,
    coverage: Vec<f64>,
    aux_event: Vec<f64>,
    aux_coverage: Vec<f64>,
}

fn profile_counts(batch: &SimBatch, tp: &[f64], scale: f64, aux: &[f64]) -> Counts {
    let n = batch.n_sites();
    let rows: Vec<(f64, f64, f64, Vec<f64>)> = (0..batch.m)
        .map(|i| {
            let w = batch.profile(i);
            let mut kmin = f64::INFINITY;
            let mut cov = 0usize;
            let ks: Vec<f64> = (0..n).map(|s| tp[s] / (scale * w[s])).collect();
            for &k in &ks {
                kmin = kmin.min(k);
                cov += count_above(aux, k);
            }
            (count_above(aux, kmin) as f64, cov as f64 / n as f64, kmin, ks)
        })
        .collect();
    let mut kmins: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let mut ks: Vec<f64> = rows.iter().flat_map(|r| r.3.iter().copied()).collect();
    kmins.sort_by(f64::total_cmp);
    ks.sort_by(f64::total_cmp);
    // r > k counts the k strictly below r
    let below = |sorted: &[f64], r: f64| sorted.partition_point(|&k| k < r) as f64;
    Counts {
        event: rows.iter().map(|r| r.0).collect(),
        coverage: rows.iter().map(|r| r.1).collect(),
        aux_event: aux.iter().map(|&r| below(&kmins, r)).collect(),
        aux_coverage: aux.iter().map(|&r| below(&ks, r) / n as f64).collect(),
    }
}

// Standard error of (1/(c m L)) Σ_ij f(w_i, r_j) from the two-sample
// decomposition Var(row means)/m + Var(column means)/L.
fn two_sample_se(per_profile: &[f64], per_aux: &[f64], scale: f64) -> f64 {
    let (m, l) = (per_profile.len() as f64, per_aux.len() as f64);
    if m < 2.0 {
        return f64::NAN;
    }
    let rows: Vec<f64> = per_profile.iter().map(|c| c / l).collect();
    let cols: Vec<f64> = per_aux.iter().map(|c| c / m).collect();
    let col_var = if per_aux.len() >= 2 { stats::variance(&cols) / l } else { 0.0 };
    (stats::variance(&rows) / m + col_var).sqrt() / scale
}

fn batch_se(per_profile: &[f64], norm: f64) -> f64 {
    let m = per_profile.len();
    let g = SE_BATCHES.min(m);
    if g < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..g)
        .map(|k| {
            let lo = k * m / g;
            let hi = (k + 1) * m / g;
            stats::pairwise_sum(&per_profile[lo..hi]) / ((hi - lo) as f64 * norm)
        })
        .collect();
    (stats::variance(&means) / g as f64).sqrt()
}

/// Importance estimate of Pr{A} at an explicit scale c.
pub fn prob_event_at_scale(batch: &SimBatch, tp: &[f64], scale: f64) -> Result<EventEstimate> {
    if batch.m == 0 || batch.aux_risks.is_empty() {
        return Err(Error::InvalidInput("batch has no profiles or no auxiliary risks".into()));
    }
    if tp.len() != batch.n_sites() {
        return Err(Error::InvalidInput("one Pareto threshold per site required".into()));
    }
    let aux = sorted_aux(batch);
    let counts = profile_counts(batch, tp, scale, &aux);
    let l = aux.len() as f64;
    let norm = scale * l;
    let ev = &counts.event;
    let cv = &counts.coverage;
    let n_event = stats::pairwise_sum(ev);
    let sum_cov = stats::pairwise_sum(cv);
    let total = norm * batch.m as f64;
    let prob = n_event / total;
    let coverage = sum_cov / total;
    let cond = if n_event > 0.0 { sum_cov / n_event } else { f64::NAN };
    // ratio estimator SE by batch means
    let cond_se = {
        let m = batch.m;
        let g = SE_BATCHES.min(m);
        let ratios: Vec<f64> = (0..g)
            .filter_map(|k| {
                let (lo, hi) = (k * m / g, (k + 1) * m / g);
                let e = stats::pairwise_sum(&ev[lo..hi]);
                (e > 0.0).then(|| stats::pairwise_sum(&cv[lo..hi]) / e)
            })
            .collect();
        if ratios.len() >= 2 {
            (stats::variance(&ratios) / ratios.len() as f64).sqrt()
        } else {
            f64::NAN
        }
    };
    Ok(EventEstimate {
        prob: Estimate {
            value: prob,
            se: two_sample_se(ev, &counts.aux_event, scale),
        },
        b: optimal_scale(batch, tp),
        scale,
        fallback: false,
        coverage: Estimate {
            value: coverage,
            se: two_sample_se(cv, &counts.aux_coverage, scale),
        },
        coverage_given_event: Estimate { value: cond, se: cond_se },
        n_event,
        sum_coverage: sum_cov,
    })
}

/// Scaled importance estimate of Pr{A} with c = b, falling back to c = v_r
/// when b ≤ v_r.
pub fn prob_event(batch: &SimBatch, tp: &[f64], v_r: f64) -> Result<EventEstimate> {
    let b = optimal_scale(batch, tp);
    if !b.is_finite() {
        // no site can exceed T
        let mut e = prob_event_at_scale(batch, tp, v_r)?;
        e.b = b;
        return Ok(e);
    }
    if b <= v_r {
        log::warn!("no scaling headroom (b = {b:.4} ≤ v_r = {v_r:.4}); using the unscaled estimator");
        let mut e = prob_event_at_scale(batch, tp, v_r)?;
        e.fallback = true;
        e.b = b;
        return Ok(e);
    }
    prob_event_at_scale(batch, tp, b)
}

/// Direct Monte Carlo on the simulated fields v_r r_i w_i, without
/// rescaling: (1/(v_r m)) Σ_i 1{∃ s: v_r r_i w_i(s) > T^P(s)}.
pub fn prob_event_naive(batch: &SimBatch, tp: &[f64], v_r: f64) -> Estimate {
    let ind: Vec<f64> = (0..batch.m)
        .map(|i| {
            let w = batch.profile(i);
            let hit = w.iter().zip(tp).any(|(&ws, &t)| v_r * batch.risks[i] * ws > t);
            f64::from(u8::from(hit))
        })
        .collect();
    Estimate {
        value: stats::pairwise_sum(&ind) / (v_r * batch.m as f64),
        se: batch_se(&ind, v_r),
    }
}

/// Data-scale pairwise measures at one distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiDataScale {
    pub h: f64,
    pub n_pairs: usize,
    /// Conditional χ_o(h; A): fraction of exceeding sites whose
    /// distance-h partner also exceeds, over fields in A.
    pub conditional: f64,
    /// Unconditional χ_o(h; T, t): average over distance-h pairs of
    /// Pr{X(s₀) > T, X(s₁) > T}.
    pub unconditional: f64,
    /// No qualifying pairs or no conditioning exceedance.
    pub flagged: bool,
}

pub const PAIR_TOLERANCE_KM: f64 = 10.0;

/// Conditional and unconditional data-scale χ over ordered site pairs at
/// distance h ± 10 km, estimated with the same scaled fields as
/// [`prob_event`].
pub fn chi_data_scale(
    batch: &SimBatch,
    tp: &[f64],
    v_r: f64,
    coords: &[[f64; 2]],
    h_grid: &[f64],
) -> Result<Vec<ChiDataScale>> {
    let n = batch.n_sites();
    if coords.len() != n || tp.len() != n {
        return Err(Error::InvalidInput("coordinates and thresholds must match batch sites".into()));
    }
    let b = optimal_scale(batch, tp);
    let scale = if b.is_finite() && b > v_r { b } else { v_r };
    let aux = sorted_aux(batch);
    let norm = scale * aux.len() as f64 * batch.m as f64;
    let mut out = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |c| (a, c)))
            .filter(|&(a, c)| (distance(coords[a], coords[c]) - h).abs() <= PAIR_TOLERANCE_KM)
            .collect();
        if pairs.is_empty() {
            out.push(ChiDataScale {
                h,
                n_pairs: 0,
                conditional: f64::NAN,
                unconditional: f64::NAN,
                flagged: true,
            });
            continue;
        }
        let per: Vec<(f64, f64)> = (0..batch.m)
            .map(|i| {
                let w = batch.profile(i);
                let k: Vec<f64> = (0..n).map(|s| tp[s] / (scale * w[s])).collect();
                let (mut joint, mut first) = (0usize, 0usize);
                for &(a, c) in &pairs {
                    first += count_above(&aux, k[a]);
                    joint += count_above(&aux, k[a].max(k[c]));
                }
                (joint as f64, first as f64)
            })
            .collect();
        let joint = stats::pairwise_sum(&per.iter().map(|p| p.0).collect::<Vec<_>>());
        let first = stats::pairwise_sum(&per.iter().map(|p| p.1).collect::<Vec<_>>());
        out.push(ChiDataScale {
            h,
            n_pairs: pairs.len(),
            conditional: if first > 0.0 { joint / first } else { f64::NAN },
            unconditional: joint / (norm * pairs.len() as f64),
            flagged: first == 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::BodyCdf;
    use crate::simulator::{simulate_profiles, SimOptions};
    use crate::tail::GpdParams;
    use crate::dependence::VariogramParams;

    fn flat_batch(n_sites: usize, m: usize, l: usize, seed: u64) -> SimBatch {
        let ids: Vec<String> = (0..n_sites).map(|i| format!("s{i}")).collect();
        let coords: Vec<[f64; 2]> = (0..n_sites).map(|i| [i as f64 * 50.0, 0.0]).collect();
        simulate_profiles(
            &VariogramParams::new(0.0, 100.0, 1.0),
            &ids,
            &coords,
            &SimOptions {
                m,
                l,
                seed,
                reference: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn return_level_example() {
        let body = BodyCdf::new(&[0.1, 0.5, 0.9], &[15.0, 20.0, 25.0]).unwrap();
        let m = LocalMargin::from_parts(body, 25.0, 0.1, GpdParams::new(1.0, -0.1));
        let x = marginal_return_level(&m, 100.0).unwrap();
        assert!((x - 29.946).abs() < 2e-3, "{x}");
        assert!(x < m.endpoint());
        assert!((m.survival(x) - 1.0 / 9200.0).abs() < 1e-15);
        assert!(matches!(marginal_return_level(&m, 0.05), Err(Error::BelowThreshold { .. })));
    }

    #[test]
    fn return_period_inverse() {
        let p = 1.0 / 920.0;
        assert!((return_period(p) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_site_analytic() {
        let batch = flat_batch(1, 10_000, 100, 3);
        let e = prob_event(&batch, &[10.0], 5.0).unwrap();
        assert!((e.prob.value - 0.1).abs() < 0.002);
    }

    #[test]
    fn comonotone_two_sites() {
        let batch = flat_batch(2, 200, 5000, 4);
        let e = prob_event(&batch, &[10.0, 20.0], 5.0).unwrap();
        assert!((e.prob.value - 0.1).abs() < 1e-12);
        assert!((e.coverage_given_event.value - 0.75).abs() < 0.05);
    }

    #[test]
    fn coverage_identity() {
        let batch = flat_batch(3, 500, 40, 5);
        let e = prob_event(&batch, &[10.0, 12.0, 30.0], 5.0).unwrap();
        let lhs = e.coverage.value;
        let rhs = e.coverage_given_event.value * e.prob.value;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn infinite_threshold_site_never_exceeds() {
        let batch = flat_batch(2, 200, 20, 6);
        let a = prob_event(&batch, &[10.0, f64::INFINITY], 5.0).unwrap();
        let b = prob_event(&flat_batch(1, 200, 20, 6), &[10.0], 5.0).unwrap();
        assert!((a.prob.value - b.prob.value).abs() < 1e-12);
    }

    #[test]
    fn conditional_chi_self_pairs() {
        let batch = flat_batch(3, 300, 30, 7);
        let coords = [[0.0, 0.0], [100.0, 0.0], [200.0, 0.0]];
        let r = chi_data_scale(&batch, &[10.0, 10.0, 10.0], 5.0, &coords, &[0.0, 100.0, 5000.0]).unwrap();
        assert!((r[0].conditional - 1.0).abs() < 1e-15);
        assert!((r[1].conditional - 1.0).abs() < 1e-15);
        assert!(r[2].flagged);
    }
}

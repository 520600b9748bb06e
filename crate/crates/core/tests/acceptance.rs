//! Acceptance criteria 1–9. Runs without the libtest harness so that each
//! criterion prints one PASS/FAIL line; the process fails if any does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use heatrisk::body::{fit_ald_design, BodyForm, Design};
use heatrisk::datastore::{load_panel_dir, CovariateSeries, DayIndex, SiteKind, SiteMeta, StationPanel, TimeCovariates};
use heatrisk::dependence::{br_chi, chi_empirical, fit_variogram, ChiOptions, VariogramParams};
use heatrisk::io::read_json;
use heatrisk::margins::{to_uniform, MarginalModel, Scale, StdPanel};
use heatrisk::pipeline::{config_for_synth, fit_nested, Pipeline, Stage, Target};
use heatrisk::resample::{
    bias_correct, block_bootstrap, crps_piecewise, crps_tau_grid, make_folds, BootstrapPlan, FoldKind,
};
use heatrisk::risk::{prob_event, prob_event_at_scale, prob_event_naive};
use heatrisk::simulator::{simulate_profiles, SimBatch, SimOptions};
use heatrisk::synth::{clim_excesses, generate, m1_excess_design, planted_body_design, sample_gpd, SynthSpec};
use heatrisk::tail::{
    fit_clim_gpd, fit_gpd, fit_obs_design, ClimFitOptions, ClimScaleLink, GpdParams, GpdRegressionOptions,
    ObsTailFit, ScaleCovariates, TailModelId,
};

type Outcome = Result<String, String>;

/// Collects failed checks and a short summary of the measured values.
#[derive(Default)]
struct Checks {
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn finish(self) -> Outcome {
        if self.failures.is_empty() {
            Ok(self.notes.join("; "))
        } else {
            Err(self.failures.join("; "))
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---------------------------------------------------------------------------
// Shared fixture: a synthetic dataset fitted through the pipeline.

struct Fixture {
    _dir: tempfile::TempDir,
    panel: StationPanel,
    model: MarginalModel,
    time_covs: Vec<TimeCovariates>,
    uniform: StdPanel,
    coords: Vec<[f64; 2]>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        seed: 2024,
        ..Default::default()
    };
    generate(&spec).unwrap().write(&dir.path().join("data")).unwrap();
    let cfg = config_for_synth(&dir.path().join("data"), &dir.path().join("out"));
    let pipeline = Pipeline::new(cfg);
    for stage in [Stage::Ingest, Stage::FitBody, Stage::FitTail] {
        pipeline.run(Target::One(stage)).unwrap();
    }
    let out = dir.path().join("out");
    let (panel, _) = load_panel_dir(&out.join("ingest/stations")).unwrap();
    let model: MarginalModel = read_json(&out.join("fit-tail/marginal.json")).unwrap();
    let time_covs = CovariateSeries::load(&out.join("ingest/covariates.csv"))
        .unwrap()
        .align(&panel.times)
        .unwrap();
    let uniform = to_uniform(&panel, &model, &model.stations, &time_covs).unwrap();
    let proj = heatrisk::datastore::Projection::about_centroid(&panel.sites);
    let coords = proj.coords(&panel.sites);
    Fixture {
        _dir: dir,
        panel,
        model,
        time_covs,
        uniform,
        coords,
    }
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let mut c = Checks::default();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let y = sample_gpd(GpdParams::new(2.0, -0.15), 20_000, &mut rng);
    let fit = fit_gpd(&y).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    c.check(rel(fit.sigma, 2.0) <= 0.05, format!("sigma {:.4}", fit.sigma));
    c.check((fit.xi + 0.15).abs() <= 0.03, format!("xi {:.4}", fit.xi));
    c.check(secs < 5.0, format!("{secs:.3} s"));
    c.finish()
}

fn criterion_2() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let sigmas: Vec<f64> = (0..50).map(|k| 0.8 + 1.7 * k as f64 / 49.0).collect();
    let ex = clim_excesses(&sigmas, -0.15, 3000, &mut rng);
    let fit = fit_clim_gpd(&ex, &ClimFitOptions::default()).map_err(|e| e.to_string())?;
    c.check((fit.xi_c + 0.15).abs() <= 0.02, format!("xi {:.4}", fit.xi_c));
    let worst = fit
        .sigma_c
        .iter()
        .zip(&sigmas)
        .map(|(s, t)| rel(*s, *t))
        .fold(0.0, f64::max);
    c.check(worst <= 0.05, format!("max sigma rel err {:.4}", worst));
    c.check(fit.sweeps <= 200, format!("{} sweeps", fit.sweeps));
    c.finish()
}

/// M0, M1 and M2 designs over the same excesses. Coast distances are drawn
/// at random since the M1 truth does not depend on them.
fn nested_designs(m1: &Design, rng: &mut impl Rng) -> [Design; 3] {
    let mut d0 = Design::new(2);
    let mut d2 = Design::new(5);
    for i in 0..m1.len() {
        let row = m1.row(i);
        let c = ScaleCovariates {
            sigma_c: row[1].exp(),
            coast_dist: rng.random_range(1.0..100.0),
            m_i: row[2],
        };
        d0.push(m1.y[i], &TailModelId::M0.design_row(ClimScaleLink::Log, c));
        d2.push(m1.y[i], &TailModelId::M2.design_row(ClimScaleLink::Log, c));
    }
    [d0, m1.clone(), d2]
}

fn nested_ok(fits: &[ObsTailFit]) -> bool {
    fits[1].loglik >= fits[0].loglik - 1e-8 && fits[2].loglik >= fits[1].loglik - 1e-8
}

fn fit_chain(designs: &[Design; 3]) -> Vec<ObsTailFit> {
    let mut fits: Vec<ObsTailFit> = Vec::new();
    for (d, id) in designs.iter().zip([TailModelId::M0, TailModelId::M1, TailModelId::M2]) {
        let f = fit_obs_design(d, id, ClimScaleLink::Log, fits.last(), GpdRegressionOptions::default()).unwrap();
        fits.push(f);
    }
    fits
}

fn criterion_3(fx: &Fixture) -> Outcome {
    let mut c = Checks::default();
    let truth = [0.2, 1.0, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let d = m1_excess_design(truth, -0.15, 50_000, &mut rng);
    let designs = nested_designs(&d, &mut rng);
    let fits = fit_chain(&designs);
    let m1 = &fits[1];
    let worst = m1.theta.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    c.check(worst <= 0.05, format!("max |theta err| {worst:.4}"));
    c.check((m1.xi_o + 0.15).abs() <= 0.05, format!("xi {:.4}", m1.xi_o));

    let mut n_sets = 0;
    let mut bad = 0;
    let mut tally = |ok: bool| {
        n_sets += 1;
        bad += usize::from(!ok);
    };
    tally(nested_ok(&fits));
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(3300 + seed);
        let d = m1_excess_design(truth, -0.15, 5000, &mut rng);
        tally(nested_ok(&fit_chain(&nested_designs(&d, &mut rng))));
    }
    let threshold = &fx.model.tail.threshold;
    let link = fx.model.tail.obs.clim_scale_link;
    tally(nested_ok(
        &fit_nested(&fx.panel, &fx.model.stations, &fx.time_covs, threshold, link).unwrap(),
    ));
    let plan = BootstrapPlan {
        block_length: 5,
        n_replicates: 20,
        seed: 33,
    };
    for rep in block_bootstrap(&fx.uniform, &plan).unwrap() {
        let data = heatrisk::margins::from_uniform(&rep, &fx.model, &fx.model.stations, &fx.time_covs).unwrap();
        tally(nested_ok(
            &fit_nested(&data, &fx.model.stations, &fx.time_covs, threshold, link).unwrap(),
        ));
    }
    c.check(bad == 0, format!("nested ordering on {}/{n_sets} datasets", n_sets - bad));
    c.finish()
}

fn criterion_4() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut d = Design::new(1);
    for _ in 0..100_000 {
        let z: f64 = rng.sample(StandardNormal);
        d.push(z, &[1.0]);
    }
    let fit = fit_ald_design(&d, 0.5, vec!["1".into()]).map_err(|e| e.to_string())?;
    c.check(fit.betas[0].abs() < 0.02, format!("median beta0 {:.4}", fit.betas[0]));

    let planted = [1.5, 0.8, 0.6];
    for tau in [0.1, 0.5, 0.9] {
        let d = planted_body_design(BodyForm::ClimMi, &planted, tau, 100_000, &mut rng);
        let fit = fit_ald_design(&d, tau, BodyForm::ClimMi.covariate_spec()).map_err(|e| e.to_string())?;
        let worst = fit.betas.iter().zip(planted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        c.check(worst <= 0.05, format!("tau {tau}: max |beta err| {worst:.4}"));
    }
    c.finish()
}

fn criterion_5(fx: &Fixture) -> Outcome {
    let mut c = Checks::default();
    let mut worst_gap: f64 = 0.0;
    let mut worst_trip: f64 = 0.0;
    let probs: Vec<f64> = (1..1000)
        .map(|k| k as f64 / 1000.0)
        .chain([0.9999, 1.0 - 1e-5, 1.0 - 1e-6, 1e-4])
        .collect();
    for t in (0..fx.time_covs.len()).step_by(97) {
        for m in fx.model.locals(&fx.model.stations, &fx.time_covs[t]).unwrap() {
            let below = m.cdf(m.u);
            let above = 1.0 - m.lambda * heatrisk::tail::gpd_survival(0.0, m.gpd);
            worst_gap = worst_gap.max((below - above).abs());
            for &p in &probs {
                worst_trip = worst_trip.max((m.cdf(m.quantile(p)) - p).abs());
            }
        }
    }
    c.check(worst_gap < 1e-9, format!("continuity gap {worst_gap:.2e}"));
    c.check(worst_trip < 1e-9, format!("round-trip {worst_trip:.2e}"));

    let mut passed = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let s = seed as usize % fx.model.stations.len();
        let t = rng.random_range(0..fx.time_covs.len());
        let m = fx.model.at(&fx.model.stations[s], &fx.time_covs[t]).unwrap();
        let x: Vec<f64> = (0..2000).map(|_| m.quantile(rng.random::<f64>())).collect();
        let ks = heatrisk::numeric::stats::ks_test(&x, |v| m.cdf(v));
        passed += usize::from(ks.p_value > 0.01);
    }
    c.check(passed >= 95, format!("KS passes {passed}/100"));
    c.finish()
}

// -- dependence -------------------------------------------------------------

const TRUE_VARIO: VariogramParams = VariogramParams {
    alpha: 1.5,
    phi: 200.0,
    nu: 1.0,
};
const N_FIELDS: usize = 100_000;
const P_CHI: f64 = 0.98;

fn layout() -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    (0..60)
        .map(|_| [rng.random_range(0.0..400.0), rng.random_range(0.0..400.0)])
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Fields r_i w_i, row-major.
fn fields(batch: &SimBatch) -> Vec<f64> {
    let n = batch.n_sites();
    let mut x = Vec::with_capacity(batch.m * n);
    for i in 0..batch.m {
        x.extend(batch.profile(i).iter().map(|w| batch.risks[i] * w));
    }
    x
}

/// Type-7 quantile of each site's column.
fn column_quantiles(x: &[f64], n: usize, p: f64) -> Vec<f64> {
    (0..n)
        .map(|s| {
            let mut col: Vec<f64> = x.iter().skip(s).step_by(n).copied().collect();
            col.sort_by(f64::total_cmp);
            heatrisk::numeric::stats::quantile_sorted(&col, p)
        })
        .collect()
}

/// Mean pairwise χ over `pairs` with batch-means standard error.
fn chi_with_se(x: &[f64], n: usize, q: &[f64], pairs: &[(usize, usize)]) -> (f64, f64) {
    let m = x.len() / n;
    let chi_over = |lo: usize, hi: usize| {
        let mut total = 0.0;
        for &(i, j) in pairs {
            let (mut ni, mut nj, mut joint) = (0u32, 0u32, 0u32);
            for t in lo..hi {
                let a = x[t * n + i] > q[i];
                let b = x[t * n + j] > q[j];
                ni += u32::from(a);
                nj += u32::from(b);
                joint += u32::from(a && b);
            }
            total += 2.0 * joint as f64 / (ni + nj).max(1) as f64;
        }
        total / pairs.len() as f64
    };
    let g = 50;
    let batches: Vec<f64> = (0..g).map(|k| chi_over(k * m / g, (k + 1) * m / g)).collect();
    let se = (heatrisk::numeric::stats::variance(&batches) / g as f64).sqrt();
    (chi_over(0, m), se)
}

fn simulate(coords: &[[f64; 2]], reference: usize, seed: u64) -> SimBatch {
    let ids: Vec<String> = (0..coords.len()).map(|i| format!("s{i:02}")).collect();
    let opts = SimOptions {
        m: N_FIELDS,
        l: 1,
        seed,
        reference: Some(reference),
    };
    simulate_profiles(&TRUE_VARIO, &ids, coords, &opts).unwrap()
}

fn criterion_6(coords: &[[f64; 2]], batch: &SimBatch) -> Outcome {
    let mut c = Checks::default();
    let n = coords.len();
    let far = (0..n)
        .max_by(|&a, &b| dist(coords[a], coords[0]).total_cmp(&dist(coords[b], coords[0])))
        .unwrap();
    let other = simulate(coords, far, 616);
    let xa = fields(batch);
    let xb = fields(&other);
    let qa = column_quantiles(&xa, n, P_CHI);
    let qb = column_quantiles(&xb, n, P_CHI);
    for h in [50.0, 100.0, 200.0, 300.0] {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| (dist(coords[i], coords[j]) - h).abs() < 10.0)
            .collect();
        if pairs.is_empty() {
            c.check(false, format!("no pairs at h = {h}"));
            continue;
        }
        let theory = pairs
            .iter()
            .map(|&(i, j)| br_chi(dist(coords[i], coords[j]), &TRUE_VARIO))
            .sum::<f64>()
            / pairs.len() as f64;
        let (ca, sa) = chi_with_se(&xa, n, &qa, &pairs);
        let (cb, sb) = chi_with_se(&xb, n, &qb, &pairs);
        c.check(
            (ca - theory).abs() < 3.0 * sa,
            format!("h {h}: chi {ca:.4} vs {theory:.4} (se {sa:.4})"),
        );
        c.check(
            (ca - cb).abs() < 3.0 * (sa * sa + sb * sb).sqrt(),
            format!("h {h}: reference swap {cb:.4}"),
        );
    }
    c.finish()
}

fn criterion_7(coords: &[[f64; 2]], batch: &SimBatch) -> Outcome {
    let mut c = Checks::default();
    let n = coords.len();
    let x = fields(batch);
    let m = batch.m;
    // rank transform each site to unit Pareto
    let mut values = vec![0.0; x.len()];
    for s in 0..n {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| x[a * n + s].total_cmp(&x[b * n + s]));
        for (rank, &t) in idx.iter().enumerate() {
            values[t * n + s] = 1.0 / (1.0 - (rank + 1) as f64 / (m + 1) as f64);
        }
    }
    let sites: Vec<SiteMeta> = (0..n)
        .map(|s| SiteMeta {
            site_id: format!("s{s:02}"),
            lon: 0.0,
            lat: 0.0,
            coast_dist: 1.0,
            kind: SiteKind::Station,
        })
        .collect();
    let times: Vec<DayIndex> = (0..m)
        .map(|i| DayIndex::new(1000 + (i / 92) as i32, (i % 92) as u32).unwrap())
        .collect();
    let panel = StationPanel::from_values(sites, times, values).unwrap();
    let opts = ChiOptions {
        p: P_CHI,
        n_bins: 30,
        n_boot: 100,
        seed: 707,
    };
    let cloud = chi_empirical(&panel, coords, &opts).map_err(|e| e.to_string())?;
    let fit = fit_variogram(&cloud).map_err(|e| e.to_string())?;
    let p = fit.params;
    c.check(rel(p.alpha, 1.5) <= 0.15, format!("alpha {:.4}", p.alpha));
    c.check(rel(p.phi, 200.0) <= 0.15, format!("phi {:.2}", p.phi));
    c.check(rel(p.nu, 1.0) <= 0.15, format!("nu {:.4}", p.nu));
    c.finish()
}

fn criterion_8() -> Outcome {
    let mut c = Checks::default();
    let one = simulate_profiles(
        &TRUE_VARIO,
        &["a".to_string()],
        &[[0.0, 0.0]],
        &SimOptions {
            m: 10_000,
            l: 100,
            seed: 801,
            reference: None,
        },
    )
    .unwrap();
    let e = prob_event(&one, &[10.0], 1.0).map_err(|e| e.to_string())?;
    c.check(rel(e.prob.value, 0.1) <= 0.02, format!("single site {:.5}", e.prob.value));

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let coords: Vec<[f64; 2]> = (0..10)
        .map(|_| [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)])
        .collect();
    let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
    let batch = simulate_profiles(
        &TRUE_VARIO,
        &ids,
        &coords,
        &SimOptions {
            m: 100_000,
            l: 100,
            seed: 802,
            reference: None,
        },
    )
    .unwrap();
    let tp = vec![30.0; 10];
    let is = prob_event(&batch, &tp, 1.0).map_err(|e| e.to_string())?;
    let naive = prob_event_naive(&batch, &tp, 1.0);
    let tol = 3.0 * (is.prob.se.powi(2) + naive.se.powi(2)).sqrt();
    c.check(
        (is.prob.value - naive.value).abs() < tol,
        format!(
            "IS {:.5} (se {:.5}) vs naive {:.5} (se {:.5})",
            is.prob.value, is.prob.se, naive.value, naive.se
        ),
    );

    let b = is.b;
    let at: Vec<_> = [1.0, b / 2.0, b]
        .iter()
        .map(|&s| prob_event_at_scale(&batch, &tp, s).unwrap())
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let (a, z) = (&at[i].prob, &at[j].prob);
            c.check(
                (a.value - z.value).abs() < 3.0 * (a.se.powi(2) + z.se.powi(2)).sqrt(),
                format!("scales {:.3}/{:.3}: {:.5} vs {:.5}", at[i].scale, at[j].scale, a.value, z.value),
            );
        }
    }
    let worst = at
        .iter()
        .chain([&is])
        .map(|e| (e.coverage.value - e.coverage_given_event.value * e.prob.value).abs())
        .fold(0.0, f64::max);
    c.check(worst <= 1e-12, format!("coverage identity {worst:.1e}"));
    c.finish()
}

fn criterion_9(fx: &Fixture) -> Outcome {
    let mut c = Checks::default();
    let plan = BootstrapPlan {
        block_length: 5,
        n_replicates: 25,
        seed: 909,
    };
    let reps = block_bootstrap(&fx.uniform, &plan).map_err(|e| e.to_string())?;
    let masks_equal = reps.iter().all(|r| {
        r.panel.observed == fx.uniform.panel.observed
            && r.panel.values.iter().zip(&fx.uniform.panel.values).all(|(a, b)| a.is_nan() == b.is_nan())
            && r.scale == Scale::Uniform
    });
    c.check(masks_equal, format!("{} replicate masks identical", reps.len()));

    // bias correction applied twice leaves the first correction unchanged
    let truth = [0.2, 1.0, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(919);
    let full_design = m1_excess_design(truth, -0.15, 20_000, &mut rng);
    let full = fit_obs_design(&full_design, TailModelId::M1, ClimScaleLink::Log, None, Default::default()).unwrap();
    let replicates: Vec<(Design, ObsTailFit)> = (0..100)
        .map(|_| {
            let d = m1_excess_design(truth, -0.15, 2000, &mut rng);
            let f = fit_obs_design(&d, TailModelId::M1, ClimScaleLink::Log, None, Default::default()).unwrap();
            (d, f)
        })
        .collect();
    let once = bias_correct(&replicates, &full).map_err(|e| e.to_string())?;
    let again_in: Vec<(Design, ObsTailFit)> = replicates
        .iter()
        .map(|(d, _)| d.clone())
        .zip(once.fits.iter().cloned())
        .collect();
    let twice = bias_correct(&again_in, &full).map_err(|e| e.to_string())?;
    let drift = once
        .fits
        .iter()
        .zip(&twice.fits)
        .flat_map(|(a, b)| a.theta.iter().zip(&b.theta).map(|(x, y)| (x - y).abs()).chain([(a.xi_o - b.xi_o).abs()]))
        .fold(0.0, f64::max);
    c.check(
        once.dropped == 0 && twice.dropped == 0 && twice.shift.abs() < 1e-10 && drift < 1e-6,
        format!("idempotent (second shift {:.1e}, drift {drift:.1e})", twice.shift),
    );

    let knots: Vec<(f64, f64)> = crps_tau_grid().into_iter().map(|p| (p, p)).collect();
    let crps = crps_piecewise(&knots, 0.5);
    c.check((crps - 1.0 / 12.0).abs() < 1e-4, format!("CRPS {crps:.6}"));

    for kind in [FoldKind::K90, FoldKind::St] {
        let folds = make_folds(&fx.panel, &fx.coords, kind, 99).map_err(|e| e.to_string())?;
        let assigned_ok = folds
            .assignments
            .iter()
            .zip(&fx.panel.observed)
            .all(|(a, &obs)| a.is_some() == obs && a.is_none_or(|k| (k as usize) < folds.n_folds));
        let members = folds.members();
        let mut seen = vec![0u8; fx.panel.observed.len()];
        for m in &members {
            for &e in m {
                seen[e] += 1;
            }
        }
        let exact = seen.iter().zip(&fx.panel.observed).all(|(&n, &obs)| n == u8::from(obs));
        c.check(assigned_ok && exact, format!("{kind:?} partition of {} folds", folds.n_folds));
    }
    c.finish()
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(msg) => {
            println!("{name}: PASS ({secs:.1} s) {msg}");
            true
        }
        Err(msg) => {
            println!("{name}: FAIL ({secs:.1} s) {msg}");
            false
        }
    }
}

fn main() {
    // the test binary may be invoked with libtest flags; a name filter that
    // excludes "acceptance" skips the run
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let fx = fixture();
    let coords = layout();
    let batch = simulate(&coords, 0, 606);
    let results = [
        run("criterion 1 (GPD recovery)", criterion_1),
        run("criterion 2 (alternating climate fit)", criterion_2),
        run("criterion 3 (covariate GPD)", || criterion_3(&fx)),
        run("criterion 4 (ALD regression)", criterion_4),
        run("criterion 5 (composite CDF)", || criterion_5(&fx)),
        run("criterion 6 (Brown-Resnick simulator)", || criterion_6(&coords, &batch)),
        run("criterion 7 (dependence fit recovery)", || criterion_7(&coords, &batch)),
        run("criterion 8 (importance estimator)", criterion_8),
        run("criterion 9 (resampling)", || criterion_9(&fx)),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

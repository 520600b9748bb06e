use proptest::prelude::*;

use heatrisk::body::{check_loss, BodyCdf};
use heatrisk::datastore::{DayIndex, SiteKind, SiteMeta, StationPanel};
use heatrisk::dependence::{br_chi, VariogramParams};
use heatrisk::io::fmt_num;
use heatrisk::margins::{LocalMargin, Scale, StdPanel};
use heatrisk::resample::{block_bootstrap, crps_piecewise, make_folds, BootstrapPlan, FoldKind};
use heatrisk::risk::prob_event_at_scale;
use heatrisk::simulator::{simulate_profiles, SimOptions};
use heatrisk::tail::{gpd_survival, gpd_survival_inverse, GpdParams};

fn panel(n_sites: usize, n_years: usize, mask: &[bool], seed: u64) -> StationPanel {
    let sites = (0..n_sites)
        .map(|s| SiteMeta {
            site_id: format!("s{s}"),
            lon: s as f64 * 0.1,
            lat: 53.0,
            coast_dist: 5.0,
            kind: SiteKind::Station,
        })
        .collect();
    let times: Vec<DayIndex> = (0..n_years * 92)
        .map(|i| DayIndex::new(2000 + (i / 92) as i32, (i % 92) as u32).unwrap())
        .collect();
    let values = (0..times.len() * n_sites)
        .map(|k| {
            if mask[k % mask.len()] {
                // a deterministic scatter in (0, 1)
                (((k as u64 + 1) * 2654435761 + seed) % 997) as f64 / 998.0 + 0.0005
            } else {
                f64::NAN
            }
        })
        .collect();
    StationPanel::from_values(sites, times, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gpd_inverse_roundtrip(sigma in 0.1f64..10.0, xi in -0.8f64..0.8, s in 1e-9f64..1.0) {
        let p = GpdParams::new(sigma, xi);
        let y = gpd_survival_inverse(s, p);
        prop_assert!(y >= 0.0);
        prop_assert!((gpd_survival(y, p) - s).abs() <= 1e-9 * s.max(1e-3));
    }

    #[test]
    fn composite_margin_is_monotone_and_invertible(
        mu in 10.0f64..25.0,
        spread in 0.5f64..5.0,
        lambda in 0.02f64..0.3,
        sigma in 0.3f64..3.0,
        xi in -0.5f64..0.3,
        p in 0.001f64..0.99999,
    ) {
        let taus = [0.05, 0.25, 0.5, 0.75, 0.95];
        let knots: Vec<f64> = [-1.6, -0.7, 0.0, 0.7, 1.6].iter().map(|z| mu + spread * z).collect();
        let body = BodyCdf::new(&taus, &knots).unwrap();
        let u = body.quantile(1.0 - lambda);
        let lambda = 1.0 - body.cdf(u);
        let m = LocalMargin::from_parts(body, u, lambda, GpdParams::new(sigma, xi));
        let x = m.quantile(p);
        prop_assert!((m.cdf(x) - p).abs() < 1e-9);
        prop_assert!(m.cdf(x + 0.01) >= m.cdf(x));
        prop_assert!(m.to_pareto(x) >= 1.0);
    }

    #[test]
    fn chi_is_a_decreasing_probability(alpha in 0.01f64..20.0, phi in 5.0f64..500.0, nu in 0.1f64..3.0, h in 0.0f64..1000.0) {
        let v = VariogramParams::new(alpha, phi, nu);
        let a = br_chi(h, &v);
        let b = br_chi(h + 10.0, &v);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn check_loss_is_nonnegative(z in -100.0f64..100.0, tau in 0.001f64..0.999) {
        prop_assert!(check_loss(z, tau) >= 0.0);
    }

    #[test]
    fn fmt_num_keeps_nine_digits(x in -1e12f64..1e12) {
        let back: f64 = fmt_num(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs().max(1e-300));
    }

    #[test]
    fn crps_of_uniform_matches_closed_form(a in -10.0f64..10.0, width in 0.1f64..20.0, t in -0.5f64..1.5) {
        // F uniform on [a, a + w]: CRPS(y) = w (s³ + (1 − s)³)/3 inside, |y − mid| − w/6 outside
        let w = width;
        let y = a + t * w;
        let got = crps_piecewise(&[(a, 0.0), (a + w, 1.0)], y);
        let want = if (0.0..=1.0).contains(&t) {
            w * (t.powi(3) + (1.0 - t).powi(3)) / 3.0
        } else {
            (y - (a + w / 2.0)).abs() - w / 6.0
        };
        prop_assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()), "{} vs {}", got, want);
    }

    #[test]
    fn coverage_identity_holds(t in proptest::collection::vec(2.0f64..200.0, 4), scale in 1.0f64..3.0, seed in 0u64..1000) {
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let coords = [[0.0, 0.0], [40.0, 0.0], [0.0, 90.0], [70.0, 70.0]];
        let batch = simulate_profiles(
            &VariogramParams::new(1.0, 80.0, 1.0),
            &ids,
            &coords,
            &SimOptions { m: 200, l: 20, seed, reference: None },
        ).unwrap();
        let e = prob_event_at_scale(&batch, &t, scale).unwrap();
        if e.n_event == 0.0 {
            // no event: the conditional is undefined and coverage is zero
            prop_assert!(e.coverage_given_event.value.is_nan());
            prop_assert_eq!(e.coverage.value, 0.0);
        } else {
            prop_assert!((e.coverage.value - e.prob.value * e.coverage_given_event.value).abs() < 1e-12);
        }
        prop_assert!(e.coverage.value <= e.prob.value + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bootstrap_preserves_mask(mask in proptest::collection::vec(any::<bool>(), 7..40), block in 1u32..=92, seed in 0u64..1000) {
        prop_assume!(mask.iter().any(|&b| b));
        let p = panel(3, 3, &mask, seed);
        // every site needs an observation for the fill rule
        prop_assume!((0..3).all(|s| p.observed.iter().skip(s).step_by(3).any(|&o| o)));
        let std = StdPanel { panel: p, scale: Scale::Uniform };
        let reps = block_bootstrap(&std, &BootstrapPlan { block_length: block, n_replicates: 3, seed }).unwrap();
        for r in reps {
            prop_assert_eq!(&r.panel.observed, &std.panel.observed);
            for (v, &o) in r.panel.values.iter().zip(&std.panel.observed) {
                prop_assert_eq!(v.is_finite(), o);
            }
        }
    }

    #[test]
    fn k90_folds_partition_observed_entries(mask in proptest::collection::vec(any::<bool>(), 5..50), seed in 0u64..1000) {
        let p = panel(4, 2, &mask, seed);
        let coords: Vec<[f64; 2]> = (0..4).map(|s| [s as f64 * 10.0, 0.0]).collect();
        let f = make_folds(&p, &coords, FoldKind::K90, seed).unwrap();
        let members = f.members();
        let total: usize = members.iter().map(Vec::len).sum();
        prop_assert_eq!(total, p.observed.iter().filter(|&&o| o).count());
        for (k, m) in members.iter().enumerate() {
            for &e in m {
                prop_assert!(p.observed[e]);
                prop_assert_eq!(f.assignments[e], Some(k as u8));
            }
        }
        // sizes differ by at most one across folds
        let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

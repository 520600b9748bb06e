use std::ffi::CString;
use std::ptr;

use heatrisk::pipeline::{config_for_synth, Pipeline, Stage, Target};
use heatrisk::synth::{generate, SynthSpec};
use heatrisk_ffi::*;

#[test]
fn fitted_margin_roundtrips_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_stations: 12,
        grid_nx: 5,
        grid_ny: 5,
        n_years: 6,
        seed: 3,
        ..Default::default()
    };
    generate(&spec).unwrap().write(&dir.path().join("data")).unwrap();
    let cfg = config_for_synth(&dir.path().join("data"), &dir.path().join("out"));
    let pipeline = Pipeline::new(cfg);
    for stage in [Stage::Ingest, Stage::FitBody, Stage::FitTail] {
        pipeline.run(Target::One(stage)).unwrap();
    }

    let path = CString::new(dir.path().join("out/fit-tail/marginal.json").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hr_marginal_load(path.as_ptr(), &mut model) }, HrStatus::Ok);
    assert_eq!(unsafe { hr_marginal_n_stations(model) }, 12);

    let time = HrTimeCovariates {
        m_i: 0.3,
        m_g: 0.2,
        co2: 360.0,
    };
    for &p in &[0.05, 0.5, 0.95, 0.999] {
        let mut x = 0.0;
        let mut back = 0.0;
        assert_eq!(unsafe { hr_marginal_quantile(model, 3, time, p, &mut x) }, HrStatus::Ok);
        assert_eq!(unsafe { hr_marginal_cdf(model, 3, time, x, &mut back) }, HrStatus::Ok);
        assert!((back - p).abs() < 1e-9, "p {p}: {back}");
    }

    let mut level = 0.0;
    assert_eq!(unsafe { hr_marginal_return_level(model, 0, time, 100.0, &mut level) }, HrStatus::Ok);
    let mut f = 0.0;
    unsafe { hr_marginal_cdf(model, 0, time, level, &mut f) };
    assert!(((1.0 - f) * 92.0 * 100.0 - 1.0).abs() < 1e-6, "{f}");

    let stations = [0usize, 1, 2];
    let mut tp = [0.0; 3];
    let st = unsafe { hr_marginal_pareto_thresholds(model, stations.as_ptr(), 3, time, level + 1.0, tp.as_mut_ptr()) };
    assert_eq!(st, HrStatus::Ok);
    assert!(tp.iter().all(|&t| t > 1.0));

    let mut x = 0.0;
    assert_eq!(unsafe { hr_marginal_quantile(model, 99, time, 0.5, &mut x) }, HrStatus::OutOfRange);
    assert_eq!(unsafe { hr_marginal_quantile(model, 0, time, 1.5, &mut x) }, HrStatus::OutOfRange);
    unsafe { hr_marginal_free(model) };
}

use std::path::Path;
use std::process::Command;

use heatrisk::pipeline::{config_for_synth, Manifest, Pipeline, PipelineConfig, Stage, Target};
use heatrisk::synth::{generate, SynthSpec};

fn small_spec() -> SynthSpec {
    SynthSpec {
        n_stations: 12,
        grid_nx: 5,
        grid_ny: 5,
        n_years: 6,
        seed: 3,
        ..Default::default()
    }
}

fn small_config(data: &Path, out: &Path) -> PipelineConfig {
    let mut cfg = config_for_synth(data, out);
    cfg.seed = 7;
    cfg.dep.boot = 20;
    cfg.sim.m = 500;
    cfg.sim.l = 50;
    cfg.resample.n = 20;
    cfg.cv.kind = "90".into();
    cfg.cv.max_folds = 3;
    cfg
}

#[test]
fn run_all_produces_every_artifact_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&small_spec()).unwrap().write(&data).unwrap();

    let out_a = dir.path().join("a");
    let cfg = small_config(&data, &out_a);
    Pipeline::new(cfg.clone()).run(Target::All).unwrap();
    for stage in Stage::ALL {
        assert!(out_a.join(stage.marker()).exists(), "{stage} marker missing");
    }
    let manifest: Manifest = heatrisk::io::read_json(&out_a.join("manifest.json")).unwrap();
    assert_eq!(manifest.stages.len(), Stage::ALL.len());
    assert_eq!(manifest.config_hash, cfg.hash());
    assert_eq!(manifest.seeds, cfg.seeds());
    for record in manifest.stages.values() {
        for file in &record.outputs {
            assert!(out_a.join(file).exists(), "{file} listed but missing");
        }
    }

    // a second run in a fresh directory reproduces the numeric outputs
    let out_b = dir.path().join("b");
    let mut cfg_b = cfg.clone();
    cfg_b.paths.outdir = out_b.clone();
    Pipeline::new(cfg_b).run(Target::All).unwrap();
    for file in ["risk/risk.csv", "risk/chi_o.csv", "fit-tail/models.csv", "return-levels/levels.csv", "bootstrap/replicates.csv", "cv/scores.csv"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }

    // re-running one stage in place is idempotent
    let before = std::fs::read(out_a.join("risk/risk.csv")).unwrap();
    Pipeline::new(cfg).run(Target::One(Stage::Risk)).unwrap();
    assert_eq!(before, std::fs::read(out_a.join("risk/risk.csv")).unwrap());
}

#[test]
fn risk_without_dependence_fit_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&small_spec()).unwrap().write(&data).unwrap();
    let cfg = small_config(&data, &dir.path().join("out"));
    let p = Pipeline::new(cfg);
    for stage in [Stage::Ingest, Stage::FitBody, Stage::FitTail] {
        p.run(Target::One(stage)).unwrap();
    }
    let err = p.run(Target::One(Stage::Risk)).unwrap_err();
    assert!(err.to_string().contains("requires stage fit-dep"), "{err}");
}

#[test]
fn validation_reports_all_problems_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[paths]
station = "missing.csv"
[sim]
m = 0
[dep]
p_fit = 2.0
"#;
    let cfg = PipelineConfig::from_toml(text, dir.path()).unwrap();
    let err = Pipeline::new(cfg).run(Target::All).unwrap_err().to_string();
    for needle in ["paths.station", "paths.grid", "sim.m", "dep.p_fit"] {
        assert!(err.contains(needle), "{needle} not in {err}");
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatrisk"))
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"n_stations": 12, "grid_nx": 5, "grid_ny": 5, "n_years": 6, "seed": 3}"#).unwrap();
    let st = bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("data"))
        .status()
        .unwrap();
    assert!(st.success());
    assert!(dir.path().join("data/truth.json").exists());

    let config = dir.path().join("heatrisk.toml");
    std::fs::write(
        &config,
        r#"seed = 5
paths.station = "data/stations.csv"
paths.grid = "data/grid.csv"
paths.covariates = "data/covariates.csv"
paths.outdir = "out"
dep.boot = 10
sim.m = 300
sim.l = 20
"#,
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = bin().arg("--config").arg(&config).args(args).env("HEATRISK_THREADS", "2").output().unwrap();
        (out.status, String::from_utf8_lossy(&out.stderr).into_owned())
    };
    let (st, err) = run(&["risk"]);
    assert!(!st.success());
    assert!(err.contains("requires stage fit-dep"), "{err}");

    for stage in ["ingest", "fit-body", "fit-tail", "transform", "fit-dep"] {
        let (st, err) = run(&["run", stage]);
        assert!(st.success(), "{stage}: {err}");
    }
    let (st, err) = run(&["simulate", "--m", "200", "--L", "10", "--seed", "4"]);
    assert!(st.success(), "{err}");
    let (st, err) = run(&["risk", "--T", "24:25:0.5", "--years", "1991,1996"]);
    assert!(st.success(), "{err}");
    let csv = std::fs::read_to_string(dir.path().join("out/risk/risk.csv")).unwrap();
    // header plus 3 temperatures × 2 years
    assert_eq!(csv.lines().count(), 7, "{csv}");
    let (st, _) = run(&["return-levels", "--period", "50"]);
    assert!(st.success());

    let (st, err) = run(&["risk", "--T", "30:20:1"]);
    assert!(!st.success());
    assert!(err.contains("temperatures"), "{err}");
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "sim.m = 0\nbody.form = \"cubic\"\n").unwrap();
    let out = bin().arg("--config").arg(&config).args(["run", "ingest"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim.m") && err.contains("body.form"), "{err}");
}

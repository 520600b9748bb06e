//! Configuration-driven pipeline: stage definitions, artifact layout,
//! provenance manifest and the stage runners used by the command line.
//!
//! Every stage reads its inputs from the output directory written by the
//! stages it depends on, so stages can be re-run individually.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::{default_tau_grid, fit_body, BodyForm, BodyModel};
use crate::covariates::{attach_sigma_c, borrow_from_grid, GridQuantiles, SiteCovariates};
use crate::datastore::{
    csv_writer, load_climate_grid, load_daily, load_panel_dir, load_station_panel, save_panel_dir, summer_filter,
    Bbox, ClimateGrid, CovariateSeries, Projection, StationPanel, TimeCovariates,
};
use crate::dependence::{
    chi_empirical, fit_time_variation, fit_variogram, risk_threshold, risk_values, ChiCloud, ChiOptions,
    DependenceModel, RiskKind, VariogramFit,
};
use crate::error::{Error, Result};
use crate::io::{fmt_num, read_json, write_json};
use crate::margins::{from_uniform, to_pareto, to_uniform, LocalMargin, MarginalModel, Scale, StdPanel};
use crate::resample::{
    bias_correct, block_bootstrap, cross_validate, make_folds, BootstrapPlan, FoldKind,
};
use crate::risk::{chi_data_scale, marginal_return_level, prob_event, return_period, threshold_on_pareto};
use crate::simulator::{simulate_profiles, SimBatch, SimOptions};
use crate::tail::{
    clim_excesses, fit_clim_gpd, fit_obs_design, fit_threshold, obs_design, ClimFitOptions, ClimScaleLink,
    ClimTailFit, GpdRegressionOptions, ObsTailFit, TailModel, TailModelId,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub station: PathBuf,
    pub grid: PathBuf,
    pub covariates: PathBuf,
    pub outdir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            station: "stations.csv".into(),
            grid: "grid.csv".into(),
            covariates: "covariates.csv".into(),
            outdir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationFormat {
    /// `site_id,lon,lat,coast_dist,year,day,value` with day of summer.
    #[default]
    Summer,
    /// `site_id,lon,lat,coast_dist,date,value` with ISO dates.
    Daily,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub station_format: StationFormat,
    /// `lon0,lat0,lon1,lat1`.
    pub bbox: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyConfig {
    pub taus: Vec<f64>,
    /// `base`, `clim` or `clim+mi`.
    pub form: String,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            taus: default_tau_grid(),
            form: "clim+mi".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    /// `M0`, `M1` or `M2`.
    pub model: String,
    /// `log` or `identity`.
    pub clim_scale_link: String,
    pub xi_tol: f64,
    pub max_sweeps: usize,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            model: "M2".into(),
            clim_scale_link: "log".into(),
            xi_tol: 1e-6,
            max_sweeps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepConfig {
    pub p_fit: f64,
    pub p_grid: Vec<f64>,
    pub bins: usize,
    pub boot: usize,
    /// Minimum number of observed sites for a day's risk value.
    pub min_observed: usize,
    /// Days on which any of these stations is unobserved carry no risk value.
    pub anchor_sites: Vec<String>,
    /// Number of M^I groups for the time-varying sill (0 disables it).
    pub time_groups: usize,
    pub seed: Option<u64>,
}

impl Default for DepConfig {
    fn default() -> Self {
        Self {
            p_fit: 0.9,
            p_grid: vec![0.8, 0.85, 0.9],
            bins: 30,
            boot: 500,
            min_observed: 1,
            anchor_sites: Vec::new(),
            time_groups: 0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub l: usize,
    pub seed: Option<u64>,
    /// Reference site id for the Gaussian field factor.
    pub reference: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 25_000,
            l: 300,
            seed: None,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    /// Critical temperatures (°C); empty picks three levels above the
    /// largest site threshold.
    pub temps: Vec<f64>,
    /// Years at which to evaluate; empty means the first and last year.
    pub years: Vec<i32>,
    /// Station ids defining the region; empty means all stations.
    pub site_set: Vec<String>,
    /// Whether the region is made of stations or climate-grid cells.
    pub sites: SiteSource,
    /// Distances (km) for the data-scale χ measures.
    pub h_grid: Vec<f64>,
    pub return_period: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            temps: Vec::new(),
            years: Vec::new(),
            site_set: Vec::new(),
            sites: SiteSource::Stations,
            h_grid: vec![25.0, 50.0, 100.0, 150.0, 200.0],
            return_period: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteSource {
    #[default]
    Stations,
    Grid,
}

impl std::str::FromStr for SiteSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stations" => Ok(SiteSource::Stations),
            "grid" => Ok(SiteSource::Grid),
            _ => Err(Error::InvalidInput(format!("unknown site source `{s}` (stations|grid)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    pub block: u32,
    pub n: usize,
    pub seed: Option<u64>,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            block: 5,
            n: 500,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    /// `90` or `st`.
    pub kind: String,
    /// Body forms compared.
    pub forms: Vec<String>,
    /// Score only the first this-many non-empty folds (0 = all).
    pub max_folds: usize,
    pub seed: Option<u64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            kind: "st".into(),
            forms: vec!["base".into(), "clim".into(), "clim+mi".into()],
            max_folds: 0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed; sections without their own seed derive one from it.
    pub seed: u64,
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub body: BodyConfig,
    pub tail: TailConfig,
    pub dep: DepConfig,
    pub sim: SimConfig,
    pub risk: RiskConfig,
    pub resample: ResampleConfig,
    pub cv: CvConfig,
}

/// Seeds actually used by each randomized stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub dep: u64,
    pub sim: u64,
    pub resample: u64,
    pub cv: u64,
}

impl PipelineConfig {
    /// Parse TOML text. Relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        for p in [
            &mut cfg.paths.station,
            &mut cfg.paths.grid,
            &mut cfg.paths.covariates,
            &mut cfg.paths.outdir,
        ] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            dep: self.dep.seed.unwrap_or(self.seed.wrapping_add(11)),
            sim: self.sim.seed.unwrap_or(self.seed.wrapping_add(1)),
            resample: self.resample.seed.unwrap_or(self.seed.wrapping_add(21)),
            cv: self.cv.seed.unwrap_or(self.seed.wrapping_add(31)),
        }
    }

    pub fn body_form(&self) -> Result<BodyForm> {
        self.body.form.parse()
    }

    pub fn tail_model(&self) -> Result<TailModelId> {
        self.tail.model.parse()
    }

    pub fn clim_link(&self) -> Result<ClimScaleLink> {
        self.tail.clim_scale_link.parse()
    }

    pub fn bbox(&self) -> Result<Option<Bbox>> {
        self.ingest.bbox.as_deref().map(str::parse).transpose()
    }

    /// Check every key; all problems are reported together.
    pub fn validate(&self, check_inputs: bool) -> Result<()> {
        let mut e = Vec::new();
        if check_inputs {
            for (name, p) in [
                ("paths.station", &self.paths.station),
                ("paths.grid", &self.paths.grid),
                ("paths.covariates", &self.paths.covariates),
            ] {
                if !p.exists() {
                    e.push(format!("{name}: {} does not exist", p.display()));
                }
            }
        }
        if let Err(err) = self.bbox() {
            e.push(format!("ingest.bbox: {err}"));
        }
        let taus = &self.body.taus;
        if taus.len() < 2 || taus.iter().any(|&t| !(0.01..=0.99).contains(&t)) || taus.windows(2).any(|w| w[0] >= w[1])
        {
            e.push("body.taus: need ≥ 2 strictly increasing levels in [0.01, 0.99]".into());
        }
        if let Err(err) = self.body_form() {
            e.push(format!("body.form: {err}"));
        }
        if let Err(err) = self.tail_model() {
            e.push(format!("tail.model: {err}"));
        }
        if let Err(err) = self.clim_link() {
            e.push(format!("tail.clim_scale_link: {err}"));
        }
        if !(self.tail.xi_tol > 0.0) {
            e.push("tail.xi_tol must be positive".into());
        }
        if self.tail.max_sweeps == 0 {
            e.push("tail.max_sweeps must be positive".into());
        }
        let p_ok = |p: f64| p > 0.5 && p < 1.0;
        if !p_ok(self.dep.p_fit) {
            e.push("dep.p_fit must lie in (0.5, 1)".into());
        }
        if self.dep.p_grid.iter().any(|&p| !p_ok(p)) {
            e.push("dep.p_grid entries must lie in (0.5, 1)".into());
        }
        if self.dep.bins == 0 {
            e.push("dep.bins must be positive".into());
        }
        if self.dep.time_groups == 1 {
            e.push("dep.time_groups must be 0 or at least 2".into());
        }
        if self.sim.m == 0 || self.sim.l == 0 {
            e.push("sim.m and sim.l must be positive".into());
        }
        if self.risk.temps.iter().any(|t| !t.is_finite()) {
            e.push("risk.temps must be finite".into());
        }
        if !(self.risk.return_period > 0.0) {
            e.push("risk.return_period must be positive".into());
        }
        if self.resample.block == 0 || self.resample.block > crate::datastore::SUMMER_DAYS {
            e.push("resample.block must lie in [1, 92]".into());
        }
        if self.cv.kind.parse::<FoldKind>().is_err() {
            e.push(format!("cv.kind: unknown fold kind `{}`", self.cv.kind));
        }
        for f in &self.cv.forms {
            if f.parse::<BodyForm>().is_err() {
                e.push(format!("cv.forms: unknown body form `{f}`"));
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Ingest,
    FitBody,
    FitTail,
    Transform,
    Chi,
    FitDep,
    Simulate,
    Risk,
    ReturnLevels,
    Bootstrap,
    Cv,
    Report,
}

impl Stage {
    /// Order used by `run all`.
    pub const ALL: [Stage; 12] = [
        Stage::Ingest,
        Stage::FitBody,
        Stage::FitTail,
        Stage::Transform,
        Stage::Chi,
        Stage::FitDep,
        Stage::Simulate,
        Stage::Risk,
        Stage::ReturnLevels,
        Stage::Bootstrap,
        Stage::Cv,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::FitBody => "fit-body",
            Stage::FitTail => "fit-tail",
            Stage::Transform => "transform",
            Stage::Chi => "chi",
            Stage::FitDep => "fit-dep",
            Stage::Simulate => "simulate",
            Stage::Risk => "risk",
            Stage::ReturnLevels => "return-levels",
            Stage::Bootstrap => "bootstrap",
            Stage::Cv => "cv",
            Stage::Report => "report",
        }
    }

    /// Upstream stages whose artifacts must exist, checked in this order.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::FitBody => &[Stage::Ingest],
            Stage::FitTail => &[Stage::FitBody],
            Stage::Transform => &[Stage::FitTail],
            Stage::Chi => &[Stage::Transform],
            Stage::FitDep => &[Stage::Transform],
            Stage::Simulate => &[Stage::FitDep],
            Stage::Risk => &[Stage::FitDep, Stage::Simulate, Stage::FitTail],
            Stage::ReturnLevels => &[Stage::FitTail],
            Stage::Bootstrap => &[Stage::Transform],
            Stage::Cv => &[Stage::FitTail],
            Stage::Report => &[Stage::FitTail, Stage::FitDep, Stage::Risk],
        }
    }

    /// The file whose presence marks the stage as complete.
    pub fn marker(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest/covariates.csv",
            Stage::FitBody => "fit-body/body.json",
            Stage::FitTail => "fit-tail/marginal.json",
            Stage::Transform => "transform/pareto/mask.csv",
            Stage::Chi => "chi/bins.csv",
            Stage::FitDep => "fit-dep/dependence.json",
            Stage::Simulate => "simulate/index.json",
            Stage::Risk => "risk/risk.csv",
            Stage::ReturnLevels => "return-levels/levels.csv",
            Stage::Bootstrap => "bootstrap/replicates.csv",
            Stage::Cv => "cv/scores.csv",
            Stage::Report => "report/summary.json",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage `{s}`")))
    }
}

/// `all` or a single stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    One(Stage),
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(Target::All)
        } else {
            s.parse().map(Target::One)
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
}

/// Provenance written beside the artifacts. Contains no timestamps, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub stages: BTreeMap<String, StageRecord>,
}

fn manifest_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.outdir.join("manifest.json")
}

fn update_manifest(cfg: &PipelineConfig, stage: Stage, record: StageRecord) -> Result<()> {
    let path = manifest_path(cfg);
    let hash = cfg.hash();
    let mut manifest = match read_json::<Manifest>(&path) {
        Ok(m) if m.config_hash == hash => m,
        _ => Manifest {
            version: VERSION.to_string(),
            config_hash: hash,
            config: cfg.clone(),
            seeds: cfg.seeds(),
            stages: BTreeMap::new(),
        },
    };
    manifest.stages.insert(stage.as_str().to_string(), record);
    write_json(&manifest, &path)
}

// ---------------------------------------------------------------------------
// Runner

pub struct Pipeline {
    pub config: PipelineConfig,
}

/// Inputs shared by the fitting stages.
struct Inputs {
    panel: StationPanel,
    grid: ClimateGrid,
    covariates: CovariateSeries,
}

struct Region {
    source: SiteSource,
    indices: Vec<usize>,
    ids: Vec<String>,
    coords: Vec<[f64; 2]>,
}

/// Marginal fit artifacts plus derived per-row covariates.
struct Fitted {
    panel: StationPanel,
    model: MarginalModel,
    time_covs: Vec<TimeCovariates>,
    covariates: CovariateSeries,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.config.paths.outdir.join(rel)
    }

    fn check_requirements(&self, stage: Stage) -> Result<()> {
        for &req in stage.requires() {
            if !self.out(req.marker()).exists() {
                return Err(Error::MissingArtifact {
                    stage: stage.as_str().into(),
                    requires: req.as_str().into(),
                });
            }
        }
        Ok(())
    }

    /// Run one stage or the whole pipeline.
    pub fn run(&self, target: Target) -> Result<()> {
        self.config.validate(matches!(target, Target::All | Target::One(Stage::Ingest)))?;
        match target {
            Target::All => {
                for stage in Stage::ALL {
                    self.run_stage(stage)?;
                }
                Ok(())
            }
            Target::One(stage) => self.run_stage(stage),
        }
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        self.check_requirements(stage)?;
        log::info!("running stage {stage}");
        let seeds = self.config.seeds();
        let (outputs, seed) = match stage {
            Stage::Ingest => (self.ingest()?, None),
            Stage::FitBody => (self.fit_body()?, None),
            Stage::FitTail => (self.fit_tail()?, None),
            Stage::Transform => (self.transform()?, None),
            Stage::Chi => (self.chi()?, Some(seeds.dep)),
            Stage::FitDep => (self.fit_dep()?, Some(seeds.dep)),
            Stage::Simulate => (self.simulate()?, Some(seeds.sim)),
            Stage::Risk => (self.risk()?, Some(seeds.sim)),
            Stage::ReturnLevels => (self.return_levels()?, None),
            Stage::Bootstrap => (self.bootstrap()?, Some(seeds.resample)),
            Stage::Cv => (self.cv()?, Some(seeds.cv)),
            Stage::Report => (self.report()?, None),
        };
        update_manifest(&self.config, stage, StageRecord { outputs, seed })
    }

    // -- loading helpers ----------------------------------------------------

    fn load_inputs(&self) -> Result<Inputs> {
        let (panel, _) = load_panel_dir(&self.out("ingest/stations"))?;
        let (gp, _) = load_panel_dir(&self.out("ingest/grid"))?;
        let grid = ClimateGrid::new(gp.sites, gp.times, gp.values)?;
        let covariates = CovariateSeries::load(&self.out("ingest/covariates.csv"))?;
        Ok(Inputs {
            panel,
            grid,
            covariates,
        })
    }

    fn load_fitted(&self) -> Result<Fitted> {
        let (panel, _) = load_panel_dir(&self.out("ingest/stations"))?;
        let covariates = CovariateSeries::load(&self.out("ingest/covariates.csv"))?;
        let model: MarginalModel = read_json(&self.out("fit-tail/marginal.json"))?;
        let time_covs = covariates.align(&panel.times)?;
        Ok(Fitted {
            panel,
            model,
            time_covs,
            covariates,
        })
    }

    fn station_coords(&self, panel: &StationPanel) -> Vec<[f64; 2]> {
        Projection::about_centroid(&panel.sites).coords(&panel.sites)
    }

    fn risk_years(&self, panel: &StationPanel) -> Vec<i32> {
        if !self.config.risk.years.is_empty() {
            return self.config.risk.years.clone();
        }
        let years: Vec<i32> = panel.rows_by_year().into_keys().collect();
        match (years.first(), years.last()) {
            (Some(&a), Some(&b)) if a != b => vec![a, b],
            (Some(&a), _) => vec![a],
            _ => Vec::new(),
        }
    }

    /// The sites making up the risk region, with coordinates in the
    /// station projection.
    fn region(&self, stations: &StationPanel) -> Result<Region> {
        let proj = Projection::about_centroid(&stations.sites);
        let sites = match self.config.risk.sites {
            SiteSource::Stations => stations.sites.clone(),
            SiteSource::Grid => load_panel_dir(&self.out("ingest/grid"))?.0.sites,
        };
        let indices: Vec<usize> = if self.config.risk.site_set.is_empty() {
            (0..sites.len()).collect()
        } else {
            self.config
                .risk
                .site_set
                .iter()
                .map(|id| {
                    sites
                        .iter()
                        .position(|s| &s.site_id == id)
                        .ok_or_else(|| Error::InvalidInput(format!("unknown site `{id}` in risk.site_set")))
                })
                .collect::<Result<_>>()?
        };
        let chosen: Vec<_> = indices.iter().map(|&i| sites[i].clone()).collect();
        Ok(Region {
            source: self.config.risk.sites,
            ids: chosen.iter().map(|s| s.site_id.clone()).collect(),
            coords: proj.coords(&chosen),
            indices,
        })
    }

    fn year_covariates(&self, covs: &CovariateSeries, year: i32) -> Result<TimeCovariates> {
        covs.year_mean(year)
            .ok_or_else(|| Error::InvalidInput(format!("no covariates for year {year}")))
    }

    // -- stages -------------------------------------------------------------

    fn ingest(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let mut panel = match cfg.ingest.station_format {
            StationFormat::Summer => load_station_panel(&cfg.paths.station)?,
            StationFormat::Daily => summer_filter(&load_daily(&cfg.paths.station)?),
        };
        let mut grid = load_climate_grid(&cfg.paths.grid)?;
        if let Some(b) = cfg.bbox()? {
            panel = panel.crop(&b);
            grid = grid.crop(&b);
        }
        let panel = panel.drop_empty_rows();
        panel.validate()?;
        if panel.n_sites() == 0 || grid.n_sites() == 0 {
            return Err(Error::InvalidInput("no stations or grid sites left after cropping".into()));
        }
        if let Some(s) = panel.sites.iter().chain(&grid.sites).find(|s| !(s.coast_dist > 0.0)) {
            return Err(Error::Schema(format!("site {} has non-positive coast distance", s.site_id)));
        }
        let covariates = CovariateSeries::load(&cfg.paths.covariates)?;
        covariates.align(&panel.times)?;
        save_panel_dir(&panel, &self.out("ingest/stations"), "celsius")?;
        save_panel_dir(&grid.to_panel(), &self.out("ingest/grid"), "celsius")?;
        covariates.save(&self.out("ingest/covariates.csv"))?;
        Ok(vec!["ingest/stations".into(), "ingest/grid".into(), "ingest/covariates.csv".into()])
    }

    fn fit_body(&self) -> Result<Vec<String>> {
        let inputs = self.load_inputs()?;
        let form = self.config.body_form()?;
        let taus = &self.config.body.taus;
        let (stations, grid_sites) = site_covariates(&inputs, taus)?;
        let time_covs = inputs.covariates.align(&inputs.panel.times)?;
        let body = fit_body(&inputs.panel, &stations, &time_covs, taus, form)?;
        write_json(&body, &self.out("fit-body/body.json"))?;
        write_json(&stations, &self.out("fit-body/sites.json"))?;
        write_json(&grid_sites, &self.out("fit-body/grid_sites.json"))?;
        let mut w = csv_writer(&self.out("fit-body/coefficients.csv"))?;
        w.write_record(["tau", "coefficient", "value", "psi"])?;
        for f in &body.fits {
            for (name, b) in f.covariate_spec.iter().zip(&f.betas) {
                w.write_record([fmt_num(f.tau), name.clone(), fmt_num(*b), fmt_num(f.psi())])?;
            }
        }
        w.flush().map_err(|e| Error::io(self.out("fit-body"), e))?;
        Ok(vec![
            "fit-body/body.json".into(),
            "fit-body/sites.json".into(),
            "fit-body/grid_sites.json".into(),
            "fit-body/coefficients.csv".into(),
        ])
    }

    fn fit_tail(&self) -> Result<Vec<String>> {
        let inputs = self.load_inputs()?;
        let body: BodyModel = read_json(&self.out("fit-body/body.json"))?;
        let mut stations: Vec<SiteCovariates> = read_json(&self.out("fit-body/sites.json"))?;
        let mut grid_sites: Vec<SiteCovariates> = read_json(&self.out("fit-body/grid_sites.json"))?;
        let model_id = self.config.tail_model()?;
        let link = self.config.clim_link()?;

        let threshold = fit_threshold(&inputs.panel, &stations)?;
        let grid_u: Vec<f64> = grid_sites.iter().map(|s| s.u_c).collect();
        let opts = ClimFitOptions {
            xi_tol: self.config.tail.xi_tol,
            max_sweeps: self.config.tail.max_sweeps,
            ..Default::default()
        };
        let clim = fit_clim_gpd(&clim_excesses(&inputs.grid, &grid_u), &opts)?;
        attach_sigma_c(&mut stations, &clim.sigma_c);
        attach_sigma_c(&mut grid_sites, &clim.sigma_c);

        let time_covs = inputs.covariates.align(&inputs.panel.times)?;
        let fits = fit_nested(&inputs.panel, &stations, &time_covs, &threshold, link)?;
        let obs = fits
            .iter()
            .find(|f| f.model_id == model_id)
            .cloned()
            .expect("all models fitted");
        let tail = TailModel {
            threshold,
            xi_c: clim.xi_c,
            obs,
        };
        let model = MarginalModel {
            body,
            tail,
            stations,
            grid: grid_sites,
        };
        write_json(&clim, &self.out("fit-tail/clim.json"))?;
        write_json(&model.tail, &self.out("fit-tail/tail.json"))?;
        write_json(&model, &self.out("fit-tail/marginal.json"))?;
        write_models_csv(&self.out("fit-tail/models.csv"), &fits, &clim)?;
        Ok(vec![
            "fit-tail/clim.json".into(),
            "fit-tail/tail.json".into(),
            "fit-tail/models.csv".into(),
            "fit-tail/marginal.json".into(),
        ])
    }

    fn transform(&self) -> Result<Vec<String>> {
        let f = self.load_fitted()?;
        let pareto = to_pareto(&f.panel, &f.model, &f.model.stations, &f.time_covs)?;
        let uniform = to_uniform(&f.panel, &f.model, &f.model.stations, &f.time_covs)?;
        save_panel_dir(&pareto.panel, &self.out("transform/pareto"), Scale::Pareto.as_str())?;
        save_panel_dir(&uniform.panel, &self.out("transform/uniform"), Scale::Uniform.as_str())?;
        Ok(vec!["transform/pareto".into(), "transform/uniform".into()])
    }

    fn pareto_panel(&self) -> Result<StationPanel> {
        let (panel, scale) = load_panel_dir(&self.out("transform/pareto"))?;
        if scale != Scale::Pareto.as_str() {
            return Err(Error::Schema(format!("transform/pareto has scale `{scale}`")));
        }
        Ok(panel)
    }

    fn chi_options(&self, p: f64) -> ChiOptions {
        ChiOptions {
            p,
            n_bins: self.config.dep.bins,
            n_boot: self.config.dep.boot,
            seed: self.config.seeds().dep,
        }
    }

    fn chi(&self) -> Result<Vec<String>> {
        let panel = self.pareto_panel()?;
        let coords = self.station_coords(&panel);
        let mut grid = self.config.dep.p_grid.clone();
        if !grid.contains(&self.config.dep.p_fit) {
            grid.push(self.config.dep.p_fit);
        }
        let mut bins = csv_writer(&self.out("chi/bins.csv"))?;
        bins.write_record(["p", "bin", "h_mean", "h_min", "h_max", "n_pairs", "chi", "var", "ci_lo", "ci_hi"])?;
        let mut outputs = vec!["chi/bins.csv".to_string()];
        for &p in &grid {
            let cloud = chi_empirical(&panel, &coords, &self.chi_options(p))?;
            for (k, b) in cloud.bins.iter().enumerate() {
                bins.write_record([
                    fmt_num(p),
                    k.to_string(),
                    fmt_num(b.h_mean),
                    fmt_num(b.h_min),
                    fmt_num(b.h_max),
                    b.n_pairs.to_string(),
                    fmt_num(b.chi),
                    fmt_num(b.var),
                    fmt_num(b.ci_lo),
                    fmt_num(b.ci_hi),
                ])?;
            }
            let name = format!("chi/cloud_p{}.json", fmt_num(p));
            write_json(&cloud, &self.out(&name))?;
            outputs.push(name);
        }
        bins.flush().map_err(|e| Error::io(self.out("chi"), e))?;
        Ok(outputs)
    }

    fn cloud_at(&self, panel: &StationPanel, coords: &[[f64; 2]], p: f64) -> Result<ChiCloud> {
        let cached = self.out(&format!("chi/cloud_p{}.json", fmt_num(p)));
        if cached.exists() {
            let cloud: ChiCloud = read_json(&cached)?;
            if cloud.n_boot == self.config.dep.boot && cloud.bins.len() <= self.config.dep.bins {
                return Ok(cloud);
            }
        }
        chi_empirical(panel, coords, &self.chi_options(p))
    }

    fn fit_dep(&self) -> Result<Vec<String>> {
        let panel = self.pareto_panel()?;
        let coords = self.station_coords(&panel);
        let dep = &self.config.dep;
        let mut fits_out = csv_writer(&self.out("fit-dep/fits.csv"))?;
        fits_out.write_record(["p", "alpha", "phi", "nu", "objective", "nu_flagged"])?;
        let mut grid = dep.p_grid.clone();
        if !grid.contains(&dep.p_fit) {
            grid.push(dep.p_fit);
        }
        let mut chosen: Option<(ChiCloud, VariogramFit)> = None;
        for &p in &grid {
            let cloud = self.cloud_at(&panel, &coords, p)?;
            let fit = fit_variogram(&cloud)?;
            fits_out.write_record([
                fmt_num(p),
                fmt_num(fit.params.alpha),
                fmt_num(fit.params.phi),
                fmt_num(fit.params.nu),
                fmt_num(fit.objective),
                fit.nu_flagged.to_string(),
            ])?;
            if p == dep.p_fit {
                chosen = Some((cloud, fit));
            }
        }
        fits_out.flush().map_err(|e| Error::io(self.out("fit-dep"), e))?;
        let (cloud, fit) = chosen.expect("p_fit is in the grid");
        if fit.nu_flagged {
            log::warn!("fitted smoothness ν = {:.3} exceeds 10", fit.params.nu);
        }

        let anchors: Vec<usize> = dep
            .anchor_sites
            .iter()
            .map(|id| site_index(&panel, id))
            .collect::<Result<_>>()?;
        let risks: Vec<f64> = risk_values(&panel, dep.min_observed, &anchors)
            .into_iter()
            .map(|r| r.1)
            .collect();
        let rt = risk_threshold(&risks)?;

        let time_variation = if dep.time_groups >= 2 {
            let covs = CovariateSeries::load(&self.out("ingest/covariates.csv"))?;
            let m_i: Vec<f64> = covs.align(&panel.times)?.iter().map(|c| c.m_i).collect();
            Some(fit_time_variation(
                &panel,
                &coords,
                &m_i,
                &fit.params,
                &cloud,
                dep.time_groups,
                self.config.seeds().dep,
            )?)
        } else {
            None
        };
        let model = DependenceModel {
            vario: fit.params,
            v_r: rt.v_r,
            risk_kind: RiskKind::MeanObserved,
            p_fit: dep.p_fit,
            min_observed: dep.min_observed,
            n_risks: rt.n_risks,
            n_exceed: rt.n_exceed,
            nu_flagged: fit.nu_flagged,
            anchor_sites: dep.anchor_sites.clone(),
            time_variation,
        };
        write_json(&model, &self.out("fit-dep/dependence.json"))?;
        Ok(vec!["fit-dep/fits.csv".into(), "fit-dep/dependence.json".into()])
    }

    fn simulate(&self) -> Result<Vec<String>> {
        let dep: DependenceModel = read_json(&self.out("fit-dep/dependence.json"))?;
        let (panel, _) = load_panel_dir(&self.out("ingest/stations"))?;
        let covs = CovariateSeries::load(&self.out("ingest/covariates.csv"))?;
        let Region { ids, coords, .. } = self.region(&panel)?;
        let reference = match &self.config.sim.reference {
            Some(id) => Some(
                ids.iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::InvalidInput(format!("sim.reference `{id}` not in the site set")))?,
            ),
            None => None,
        };
        let opts = SimOptions {
            m: self.config.sim.m,
            l: self.config.sim.l,
            seed: self.config.seeds().sim,
            reference,
        };
        let varying = dep.time_variation.as_ref().is_some_and(|tv| tv.significant);
        let mut index: BTreeMap<String, String> = BTreeMap::new();
        let mut outputs = Vec::new();
        if varying {
            for year in self.risk_years(&panel) {
                let m_i = self.year_covariates(&covs, year)?.m_i;
                let batch = simulate_profiles(&dep.vario_at(m_i), &ids, &coords, &opts)?;
                let name = format!("simulate/batch_{year}.json");
                write_json(&batch, &self.out(&name))?;
                index.insert(year.to_string(), name.clone());
                outputs.push(name);
            }
        } else {
            let batch = simulate_profiles(&dep.vario, &ids, &coords, &opts)?;
            write_json(&batch, &self.out("simulate/batch.json"))?;
            for year in self.risk_years(&panel) {
                index.insert(year.to_string(), "simulate/batch.json".into());
            }
            outputs.push("simulate/batch.json".into());
        }
        write_json(&index, &self.out("simulate/index.json"))?;
        outputs.push("simulate/index.json".into());
        Ok(outputs)
    }

    fn risk(&self) -> Result<Vec<String>> {
        let f = self.load_fitted()?;
        let dep: DependenceModel = read_json(&self.out("fit-dep/dependence.json"))?;
        let index: BTreeMap<String, String> = read_json(&self.out("simulate/index.json"))?;
        let region = self.region(&f.panel)?;
        let pool = match region.source {
            SiteSource::Stations => &f.model.stations,
            SiteSource::Grid => &f.model.grid,
        };
        let sites: Vec<SiteCovariates> = region.indices.iter().map(|&s| pool[s].clone()).collect();
        let coords = region.coords;

        let mut rows = csv_writer(&self.out("risk/risk.csv"))?;
        rows.write_record([
            "year",
            "m_i",
            "temp",
            "prob",
            "prob_se",
            "return_period",
            "b",
            "scale",
            "fallback",
            "coverage",
            "coverage_se",
            "coverage_given_event",
            "coverage_given_event_se",
        ])?;
        let mut chi_rows = csv_writer(&self.out("risk/chi_o.csv"))?;
        chi_rows.write_record(["year", "temp", "h", "n_pairs", "conditional", "unconditional", "flagged"])?;

        let years = self.risk_years(&f.panel);
        let margins_by_year: Vec<(i32, TimeCovariates, Vec<LocalMargin>)> = years
            .iter()
            .map(|&y| {
                let tc = self.year_covariates(&f.covariates, y)?;
                Ok((y, tc, f.model.locals(&sites, &tc)?))
            })
            .collect::<Result<_>>()?;
        let temps = if self.config.risk.temps.is_empty() {
            let u_max = margins_by_year
                .iter()
                .flat_map(|(_, _, ms)| ms.iter().map(|m| m.u))
                .fold(f64::NEG_INFINITY, f64::max);
            let base = (u_max * 2.0).ceil() / 2.0;
            vec![base, base + 1.0, base + 2.0]
        } else {
            self.config.risk.temps.clone()
        };

        let mut batches: BTreeMap<String, SimBatch> = BTreeMap::new();
        for (year, tc, margins) in &margins_by_year {
            let file = index
                .get(&year.to_string())
                .ok_or_else(|| Error::MissingArtifact {
                    stage: "risk".into(),
                    requires: format!("simulate (no batch for year {year})"),
                })?;
            if !batches.contains_key(file) {
                batches.insert(file.clone(), read_json(&self.out(file))?);
            }
            let batch = &batches[file];
            if batch.n_sites() != sites.len() {
                return Err(Error::InvalidInput("simulated batch does not match risk.site_set".into()));
            }
            for &temp in &temps {
                let tp = threshold_on_pareto(temp, margins)?;
                let e = prob_event(batch, &tp, dep.v_r)?;
                rows.write_record([
                    year.to_string(),
                    fmt_num(tc.m_i),
                    fmt_num(temp),
                    fmt_num(e.prob.value),
                    fmt_num(e.prob.se),
                    fmt_num(return_period(e.prob.value)),
                    fmt_num(e.b),
                    fmt_num(e.scale),
                    e.fallback.to_string(),
                    fmt_num(e.coverage.value),
                    fmt_num(e.coverage.se),
                    fmt_num(e.coverage_given_event.value),
                    fmt_num(e.coverage_given_event.se),
                ])?;
                for c in chi_data_scale(batch, &tp, dep.v_r, &coords, &self.config.risk.h_grid)? {
                    chi_rows.write_record([
                        year.to_string(),
                        fmt_num(temp),
                        fmt_num(c.h),
                        c.n_pairs.to_string(),
                        fmt_num(c.conditional),
                        fmt_num(c.unconditional),
                        c.flagged.to_string(),
                    ])?;
                }
            }
        }
        rows.flush().map_err(|e| Error::io(self.out("risk"), e))?;
        chi_rows.flush().map_err(|e| Error::io(self.out("risk"), e))?;
        Ok(vec!["risk/risk.csv".into(), "risk/chi_o.csv".into()])
    }

    fn return_levels(&self) -> Result<Vec<String>> {
        let f = self.load_fitted()?;
        let period = self.config.risk.return_period;
        let years = self.risk_years(&f.panel);
        let mut w = csv_writer(&self.out("return-levels/levels.csv"))?;
        w.write_record(["site_id", "year", "m_i", "period", "level"])?;
        let pool = match self.config.risk.sites {
            SiteSource::Stations => &f.model.stations,
            SiteSource::Grid => &f.model.grid,
        };
        let mut per_site: Vec<Vec<f64>> = vec![Vec::new(); pool.len()];
        for &year in &years {
            let tc = self.year_covariates(&f.covariates, year)?;
            let margins = f.model.locals(pool, &tc)?;
            for (s, m) in margins.iter().enumerate() {
                let level = marginal_return_level(m, period)?;
                per_site[s].push(level);
                w.write_record([
                    pool[s].site_id.clone(),
                    year.to_string(),
                    fmt_num(tc.m_i),
                    fmt_num(period),
                    fmt_num(level),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(self.out("return-levels"), e))?;
        let mut c = csv_writer(&self.out("return-levels/change.csv"))?;
        c.write_record(["site_id", "from_year", "to_year", "change"])?;
        if years.len() >= 2 {
            for (s, levels) in per_site.iter().enumerate() {
                c.write_record([
                    pool[s].site_id.clone(),
                    years[0].to_string(),
                    years[years.len() - 1].to_string(),
                    fmt_num(levels[levels.len() - 1] - levels[0]),
                ])?;
            }
        }
        c.flush().map_err(|e| Error::io(self.out("return-levels"), e))?;
        Ok(vec!["return-levels/levels.csv".into(), "return-levels/change.csv".into()])
    }

    fn bootstrap(&self) -> Result<Vec<String>> {
        let f = self.load_fitted()?;
        let (uniform, scale) = load_panel_dir(&self.out("transform/uniform"))?;
        if scale != Scale::Uniform.as_str() {
            return Err(Error::Schema(format!("transform/uniform has scale `{scale}`")));
        }
        let std = StdPanel {
            panel: uniform,
            scale: Scale::Uniform,
        };
        let plan = BootstrapPlan {
            block_length: self.config.resample.block,
            n_replicates: self.config.resample.n,
            seed: self.config.seeds().resample,
        };
        let link = f.model.tail.obs.clim_scale_link;
        let model_id = f.model.tail.obs.model_id;
        let threshold = &f.model.tail.threshold;
        let stations = &f.model.stations;
        let replicates = block_bootstrap(&std, &plan)?;
        // every replicate is refitted along the nested chain M0 → M1 → M2
        let refits: Vec<Option<(crate::body::Design, Vec<ObsTailFit>)>> = {
            use rayon::prelude::*;
            replicates
                .par_iter()
                .enumerate()
                .map(|(r, rep)| {
                    let data = match from_uniform(rep, &f.model, stations, &f.time_covs) {
                        Ok(d) => d,
                        Err(e) => {
                            log::warn!("bootstrap replicate {r} dropped: {e}");
                            return None;
                        }
                    };
                    match fit_nested(&data, stations, &f.time_covs, threshold, link) {
                        Ok(fits) => {
                            let design = obs_design(&data, stations, &f.time_covs, threshold, model_id, link).ok()?;
                            Some((design, fits))
                        }
                        Err(e) => {
                            log::warn!("bootstrap replicate {r} dropped: {e}");
                            None
                        }
                    }
                })
                .collect()
        };
        let kept: Vec<(crate::body::Design, Vec<ObsTailFit>)> = refits.into_iter().flatten().collect();
        let dropped = plan.n_replicates - kept.len();
        let pairs: Vec<(crate::body::Design, ObsTailFit)> = kept
            .iter()
            .map(|(d, fits)| {
                let fit = fits.iter().find(|x| x.model_id == model_id).cloned().expect("fitted");
                (d.clone(), fit)
            })
            .collect();
        let corrected = if pairs.len() >= crate::resample::MIN_BIAS_REPLICATES {
            Some(bias_correct(&pairs, &f.model.tail.obs)?)
        } else {
            log::warn!(
                "only {} usable replicates; bias correction needs {}",
                pairs.len(),
                crate::resample::MIN_BIAS_REPLICATES
            );
            None
        };

        let spec = &f.model.tail.obs.covariate_spec;
        let mut w = csv_writer(&self.out("bootstrap/replicates.csv"))?;
        let mut header = vec![
            "replicate".to_string(),
            "loglik_m0".into(),
            "loglik_m1".into(),
            "loglik_m2".into(),
            "nested_ok".into(),
            "xi".into(),
        ];
        header.extend(spec.iter().map(|s| format!("theta_{s}")));
        header.push("xi_corrected".into());
        header.extend(spec.iter().map(|s| format!("theta_corrected_{s}")));
        w.write_record(&header)?;
        let mut nested_failures = 0;
        for (r, (_, fits)) in kept.iter().enumerate() {
            let ll: Vec<f64> = fits.iter().map(|x| x.loglik).collect();
            let nested = ll[1] >= ll[0] - 1e-6 && ll[2] >= ll[1] - 1e-6;
            if !nested {
                nested_failures += 1;
            }
            let own = &pairs[r].1;
            let mut rec = vec![
                r.to_string(),
                fmt_num(ll[0]),
                fmt_num(ll[1]),
                fmt_num(ll[2]),
                nested.to_string(),
                fmt_num(own.xi_o),
            ];
            rec.extend(own.theta.iter().map(|&t| fmt_num(t)));
            match corrected.as_ref().and_then(|c| c.fits.get(r)) {
                Some(c) if corrected.as_ref().is_some_and(|c| c.dropped == 0) => {
                    rec.push(fmt_num(c.xi_o));
                    rec.extend(c.theta.iter().map(|&t| fmt_num(t)));
                }
                _ => {
                    rec.push(String::new());
                    rec.extend(spec.iter().map(|_| String::new()));
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(self.out("bootstrap"), e))?;

        let xis: Vec<f64> = pairs.iter().map(|p| p.1.xi_o).collect();
        let summary = BootstrapSummary {
            n_requested: plan.n_replicates,
            n_used: kept.len(),
            dropped,
            block_length: plan.block_length,
            seed: plan.seed,
            xi_full: f.model.tail.obs.xi_o,
            xi_mean: if xis.is_empty() { f64::NAN } else { crate::numeric::stats::mean(&xis) },
            shift: corrected.as_ref().map(|c| c.shift),
            refit_dropped: corrected.as_ref().map_or(0, |c| c.dropped),
            nested_failures,
        };
        write_json(&summary, &self.out("bootstrap/summary.json"))?;
        Ok(vec!["bootstrap/replicates.csv".into(), "bootstrap/summary.json".into()])
    }

    fn cv(&self) -> Result<Vec<String>> {
        let f = self.load_fitted()?;
        let kind: FoldKind = self.config.cv.kind.parse()?;
        let coords = self.station_coords(&f.panel);
        let mut folds = make_folds(&f.panel, &coords, kind, self.config.seeds().cv)?;
        if self.config.cv.max_folds > 0 {
            let mut kept = 0;
            let mut allowed = vec![false; folds.n_folds];
            for (k, m) in folds.members().iter().enumerate() {
                if !m.is_empty() && kept < self.config.cv.max_folds {
                    allowed[k] = true;
                    kept += 1;
                }
            }
            for a in folds.assignments.iter_mut() {
                if a.is_some_and(|k| !allowed[k as usize]) {
                    *a = None;
                }
            }
        }
        let taus = &f.model.body.tau_grid;
        let model_id = f.model.tail.obs.model_id;
        let link = f.model.tail.obs.clim_scale_link;
        let mut scores = csv_writer(&self.out("cv/scores.csv"))?;
        scores.write_record(["kind", "form", "tail_model", "rmse", "crps", "n_folds"])?;
        let mut per_fold = csv_writer(&self.out("cv/folds.csv"))?;
        per_fold.write_record(["form", "fold", "n_obs", "n_site_years", "rmse", "crps"])?;
        for name in &self.config.cv.forms {
            let form: BodyForm = name.parse()?;
            let fit = |train: &StationPanel| -> Result<MarginalModel> {
                let body = fit_body(train, &f.model.stations, &f.time_covs, taus, form)?;
                let threshold = fit_threshold(train, &f.model.stations)?;
                let design = obs_design(train, &f.model.stations, &f.time_covs, &threshold, model_id, link)?;
                let obs = fit_obs_design(&design, model_id, link, Some(&f.model.tail.obs), GpdRegressionOptions::default())?;
                Ok(MarginalModel {
                    body,
                    tail: TailModel {
                        threshold,
                        xi_c: f.model.tail.xi_c,
                        obs,
                    },
                    stations: f.model.stations.clone(),
                    grid: f.model.grid.clone(),
                })
            };
            let s = cross_validate(&f.panel, &folds, &f.model.stations, &f.time_covs, taus, fit)?;
            scores.write_record([
                self.config.cv.kind.clone(),
                name.clone(),
                model_id.to_string(),
                fmt_num(s.rmse),
                fmt_num(s.crps),
                s.folds.len().to_string(),
            ])?;
            for fs in &s.folds {
                per_fold.write_record([
                    name.clone(),
                    fs.fold.to_string(),
                    fs.n_obs.to_string(),
                    fs.n_site_years.to_string(),
                    fmt_num(fs.rmse),
                    fmt_num(fs.crps),
                ])?;
            }
        }
        scores.flush().map_err(|e| Error::io(self.out("cv"), e))?;
        per_fold.flush().map_err(|e| Error::io(self.out("cv"), e))?;
        Ok(vec!["cv/scores.csv".into(), "cv/folds.csv".into()])
    }

    fn report(&self) -> Result<Vec<String>> {
        let model: MarginalModel = read_json(&self.out("fit-tail/marginal.json"))?;
        let clim: ClimTailFit = read_json(&self.out("fit-tail/clim.json"))?;
        let dep: DependenceModel = read_json(&self.out("fit-dep/dependence.json"))?;
        let risk_text = std::fs::read_to_string(self.out("risk/risk.csv")).map_err(|e| Error::io(self.out("risk/risk.csv"), e))?;
        let summary = ReportSummary {
            version: VERSION.into(),
            config_hash: self.config.hash(),
            body_form: model.body.form.covariate_spec().join(" + "),
            tail_model: model.tail.obs.model_id.to_string(),
            tail_theta: model
                .tail
                .obs
                .covariate_spec
                .iter()
                .cloned()
                .zip(model.tail.obs.theta.iter().copied())
                .collect(),
            xi_o: model.tail.obs.xi_o,
            xi_c: clim.xi_c,
            clim_sweeps: clim.sweeps,
            vario: dep.vario,
            v_r: dep.v_r,
            nu_flagged: dep.nu_flagged,
            time_varying_sill: dep.time_variation.as_ref().is_some_and(|t| t.significant),
        };
        write_json(&summary, &self.out("report/summary.json"))?;
        let mut md = String::new();
        md.push_str("# Heat-risk pipeline report\n\n");
        md.push_str(&format!("Configuration hash: `{}`\n\n", summary.config_hash));
        md.push_str("## Margins\n\n");
        md.push_str(&format!("* body covariates: {}\n", summary.body_form));
        md.push_str(&format!("* tail model: {} (xi_o = {})\n", summary.tail_model, fmt_num(summary.xi_o)));
        for (name, v) in &summary.tail_theta {
            md.push_str(&format!("  * {name}: {}\n", fmt_num(*v)));
        }
        md.push_str(&format!("* climate shape xi_c = {} after {} sweeps\n\n", fmt_num(clim.xi_c), clim.sweeps));
        md.push_str("## Dependence\n\n");
        md.push_str(&format!(
            "* Matérn variogram: alpha = {}, phi = {} km, nu = {}\n* risk threshold v_r = {}\n\n",
            fmt_num(dep.vario.alpha),
            fmt_num(dep.vario.phi),
            fmt_num(dep.vario.nu),
            fmt_num(dep.v_r)
        ));
        md.push_str("## Event probabilities\n\n```\n");
        md.push_str(&risk_text);
        md.push_str("```\n");
        std::fs::write(self.out("report/report.md"), md).map_err(|e| Error::io(self.out("report/report.md"), e))?;
        Ok(vec!["report/summary.json".into(), "report/report.md".into()])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_requested: usize,
    pub n_used: usize,
    pub dropped: usize,
    pub block_length: u32,
    pub seed: u64,
    pub xi_full: f64,
    pub xi_mean: f64,
    pub shift: Option<f64>,
    pub refit_dropped: usize,
    pub nested_failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub version: String,
    pub config_hash: String,
    pub body_form: String,
    pub tail_model: String,
    pub tail_theta: Vec<(String, f64)>,
    pub xi_o: f64,
    pub xi_c: f64,
    pub clim_sweeps: usize,
    pub vario: crate::dependence::VariogramParams,
    pub v_r: f64,
    pub nu_flagged: bool,
    pub time_varying_sill: bool,
}

fn site_index(panel: &StationPanel, id: &str) -> Result<usize> {
    panel
        .sites
        .iter()
        .position(|s| s.site_id == id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown station `{id}`")))
}

fn site_covariates(inputs: &Inputs, taus: &[f64]) -> Result<(Vec<SiteCovariates>, Vec<SiteCovariates>)> {
    let tables = GridQuantiles::compute(&inputs.grid, taus)?;
    let proj = Projection::about_centroid(&inputs.panel.sites);
    let stations = borrow_from_grid(&inputs.panel.sites, &inputs.grid.sites, &proj, &tables, None);
    let grid_sites = borrow_from_grid(&inputs.grid.sites, &inputs.grid.sites, &proj, &tables, None);
    Ok((stations, grid_sites))
}

/// Fit M0, M1 and M2 in turn, each warm-started from the previous fit so
/// the profile likelihoods are ordered.
pub fn fit_nested(
    panel: &StationPanel,
    sites: &[SiteCovariates],
    time_covs: &[TimeCovariates],
    threshold: &crate::tail::ThresholdField,
    link: ClimScaleLink,
) -> Result<Vec<ObsTailFit>> {
    let mut fits: Vec<ObsTailFit> = Vec::with_capacity(3);
    for id in [TailModelId::M0, TailModelId::M1, TailModelId::M2] {
        let d = obs_design(panel, sites, time_covs, threshold, id, link)?;
        let fit = fit_obs_design(&d, id, link, fits.last(), GpdRegressionOptions::default())?;
        fits.push(fit);
    }
    Ok(fits)
}

fn write_models_csv(path: &Path, fits: &[ObsTailFit], clim: &ClimTailFit) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["model", "coefficient", "value", "xi_o", "loglik", "n_excesses"])?;
    for f in fits {
        for (name, v) in f.covariate_spec.iter().zip(&f.theta) {
            w.write_record([
                f.model_id.to_string(),
                name.clone(),
                fmt_num(*v),
                fmt_num(f.xi_o),
                fmt_num(f.loglik),
                f.n_excesses.to_string(),
            ])?;
        }
    }
    w.write_record([
        "clim".to_string(),
        "xi_c".into(),
        fmt_num(clim.xi_c),
        String::new(),
        fmt_num(clim.loglik),
        String::new(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fill in the input paths of a configuration for a synthetic dataset
/// directory written by [`crate::synth::SynthData::write`].
pub fn config_for_synth(dir: &Path, outdir: &Path) -> PipelineConfig {
    PipelineConfig {
        paths: PathsConfig {
            station: dir.join("stations.csv"),
            grid: dir.join("grid.csv"),
            covariates: dir.join("covariates.csv"),
            outdir: outdir.to_path_buf(),
        },
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate(false).unwrap();
    }

    #[test]
    fn dotted_keys_parse() {
        let cfg = PipelineConfig::from_toml(
            "seed = 4\nsim.m = 100\ndep.p_grid = [0.85]\n[risk]\ntemps = [30.0]\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.sim.m, 100);
        assert_eq!(cfg.sim.l, 300);
        assert_eq!(cfg.dep.p_grid, vec![0.85]);
        assert_eq!(cfg.risk.temps, vec![30.0]);
        assert_eq!(cfg.paths.outdir, Path::new("/base/out"));
        assert_eq!(cfg.seeds().sim, 5);
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = PipelineConfig::default();
        cfg.dep.p_fit = 1.5;
        cfg.sim.m = 0;
        cfg.body.form = "nope".into();
        match cfg.validate(false) {
            Err(Error::Config(list)) => assert_eq!(list.len(), 3, "{list:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("sim.mm = 3", Path::new(".")).is_err());
    }

    #[test]
    fn hash_changes_with_config() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.sim.m += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("all".parse::<Target>().unwrap(), Target::All);
    }

    #[test]
    fn missing_dependency_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.outdir = dir.path().to_path_buf();
        let err = Pipeline::new(cfg).run(Target::One(Stage::Risk)).unwrap_err();
        assert!(err.to_string().contains("requires stage fit-dep"), "{err}");
    }
}

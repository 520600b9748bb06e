// `!(x > 0.0)` style guards deliberately treat NaN as invalid
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heatrisk::pipeline::{Pipeline, PipelineConfig, SiteSource, Stage, Target};
use heatrisk::synth::{generate, SynthSpec};
use heatrisk::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "heatrisk", version, about = "Spatial heat-risk modelling pipeline")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Seed for the randomized stage being run; with `run` it sets the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap.
    #[arg(long, global = true, env = "HEATRISK_THREADS")]
    threads: Option<usize>,

    /// Spatial crop `lon0,lat0,lon1,lat1` applied at ingest.
    #[arg(long, global = true, allow_hyphen_values = true)]
    bbox: Option<String>,

    /// Output directory (overrides paths.outdir).
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, crop and validate the input CSVs.
    Ingest,
    /// Write a synthetic dataset with known truth.
    Synth {
        /// JSON specification; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the quantile-regression body.
    FitBody {
        /// Comma-separated quantile levels.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        /// base, clim or clim+mi.
        #[arg(long)]
        model: Option<String>,
    },
    /// Fit thresholds, the climate-grid GPD and the station GPD.
    FitTail {
        /// M0, M1 or M2.
        #[arg(long)]
        model: Option<String>,
        /// log or identity.
        #[arg(long)]
        clim_scale_link: Option<String>,
    },
    /// Transform station data to Pareto and uniform margins.
    Transform,
    /// Empirical χ clouds over a grid of levels.
    Chi {
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        boot: Option<usize>,
    },
    /// Fit the variogram and the risk threshold.
    FitDep {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        boot: Option<usize>,
    },
    /// Simulate r-Pareto profiles.
    Simulate {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long = "L", short = 'L')]
        l: Option<usize>,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Event probabilities and coverage.
    Risk {
        /// Temperatures as `a:b:step` or a comma list.
        #[arg(long = "T", short = 'T')]
        temps: Option<String>,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Per-site return levels.
    ReturnLevels {
        #[arg(long)]
        period: Option<f64>,
        #[command(flatten)]
        region: RegionArgs,
    },
    /// Block bootstrap of the tail fit.
    Bootstrap {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        block: Option<u32>,
    },
    /// Cross-validated body scores.
    Cv {
        /// 90 or st.
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated body forms.
        #[arg(long, value_delimiter = ',')]
        model: Option<Vec<String>>,
        /// Score only this many folds (0 = all).
        #[arg(long)]
        max_folds: Option<usize>,
    },
    /// Summary JSON and markdown report.
    Report,
    /// Run one stage or `all`.
    Run { stage: String },
}

#[derive(Args, Debug)]
struct RegionArgs {
    /// Comma-separated years.
    #[arg(long, value_delimiter = ',')]
    years: Option<Vec<i32>>,
    /// stations or grid.
    #[arg(long)]
    sites: Option<String>,
}

impl RegionArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(y) = &self.years {
            cfg.risk.years = y.clone();
        }
        if let Some(s) = &self.sites {
            cfg.risk.sites = s.parse::<SiteSource>()?;
        }
        Ok(())
    }
}

/// `a:b:step` (inclusive) or `t1,t2,...`.
fn parse_temps(s: &str) -> Result<Vec<f64>> {
    let bad = |e: &dyn std::fmt::Display| Error::InvalidInput(format!("temperatures `{s}`: {e}"));
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(&e))?;
        let [a, b, step] = parts[..] else {
            return Err(bad(&"expected a:b:step"));
        };
        if !(step > 0.0) || b < a {
            return Err(bad(&"need step > 0 and b ≥ a"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|k| a + k as f64 * step).collect())
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| bad(&e)))
            .collect()
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => PipelineConfig::from_toml("", Path::new(".")),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }

    if let Command::Synth { spec, out } = &cli.command {
        let mut spec: SynthSpec = match spec {
            Some(p) => heatrisk::io::read_json(p)?,
            None => SynthSpec::default(),
        };
        if let Some(seed) = cli.seed {
            spec.seed = seed;
        }
        let data = generate(&spec)?;
        data.write(out)?;
        println!("wrote synthetic dataset to {}", out.display());
        return Ok(());
    }

    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(b) = &cli.bbox {
        cfg.ingest.bbox = Some(b.clone());
    }
    if let Some(o) = &cli.outdir {
        cfg.paths.outdir = o.clone();
    }
    let seed = cli.seed;
    let target = match &cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Ingest => Target::One(Stage::Ingest),
        Command::FitBody { taus, model } => {
            if let Some(t) = taus {
                cfg.body.taus = t.clone();
            }
            if let Some(m) = model {
                cfg.body.form = m.clone();
            }
            Target::One(Stage::FitBody)
        }
        Command::FitTail { model, clim_scale_link } => {
            if let Some(m) = model {
                cfg.tail.model = m.clone();
            }
            if let Some(l) = clim_scale_link {
                cfg.tail.clim_scale_link = l.clone();
            }
            Target::One(Stage::FitTail)
        }
        Command::Transform => Target::One(Stage::Transform),
        Command::Chi { p, bins, boot } => {
            if let Some(p) = p {
                cfg.dep.p_grid = p.clone();
            }
            cfg.dep.bins = bins.unwrap_or(cfg.dep.bins);
            cfg.dep.boot = boot.unwrap_or(cfg.dep.boot);
            cfg.dep.seed = seed.or(cfg.dep.seed);
            Target::One(Stage::Chi)
        }
        Command::FitDep { p, bins, boot } => {
            cfg.dep.p_fit = p.unwrap_or(cfg.dep.p_fit);
            cfg.dep.bins = bins.unwrap_or(cfg.dep.bins);
            cfg.dep.boot = boot.unwrap_or(cfg.dep.boot);
            cfg.dep.seed = seed.or(cfg.dep.seed);
            Target::One(Stage::FitDep)
        }
        Command::Simulate { m, l, region } => {
            cfg.sim.m = m.unwrap_or(cfg.sim.m);
            cfg.sim.l = l.unwrap_or(cfg.sim.l);
            cfg.sim.seed = seed.or(cfg.sim.seed);
            region.apply(&mut cfg)?;
            Target::One(Stage::Simulate)
        }
        Command::Risk { temps, region } => {
            if let Some(t) = temps {
                cfg.risk.temps = parse_temps(t)?;
            }
            region.apply(&mut cfg)?;
            Target::One(Stage::Risk)
        }
        Command::ReturnLevels { period, region } => {
            cfg.risk.return_period = period.unwrap_or(cfg.risk.return_period);
            region.apply(&mut cfg)?;
            Target::One(Stage::ReturnLevels)
        }
        Command::Bootstrap { n, block } => {
            cfg.resample.n = n.unwrap_or(cfg.resample.n);
            cfg.resample.block = block.unwrap_or(cfg.resample.block);
            cfg.resample.seed = seed.or(cfg.resample.seed);
            Target::One(Stage::Bootstrap)
        }
        Command::Cv { kind, model, max_folds } => {
            if let Some(k) = kind {
                cfg.cv.kind = k.clone();
            }
            if let Some(m) = model {
                cfg.cv.forms = m.clone();
            }
            cfg.cv.max_folds = max_folds.unwrap_or(cfg.cv.max_folds);
            cfg.cv.seed = seed.or(cfg.cv.seed);
            Target::One(Stage::Cv)
        }
        Command::Report => Target::One(Stage::Report),
        Command::Run { stage } => {
            cfg.seed = seed.unwrap_or(cfg.seed);
            stage.parse()?
        }
    };
    Pipeline::new(cfg).run(target)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

//! Modelling of temporally non-stationary spatial temperature extremes.
//!
//! The crate is organised as a pipeline:
//!
//! * [`datastore`]: station / climate-grid panels with missingness masks,
//! * [`body`]: asymmetric-Laplace quantile regressions interpolated into a
//!   per-(time, site) distribution function for the body,
//! * [`tail`]: thresholds, exceedance rates and covariate GPD tails,
//! * [`margins`]: probability integral transforms to standard scales,
//! * [`dependence`]: empirical χ, Matérn variograms and Brown–Resnick fits,
//! * [`simulator`]: r-Pareto process simulation (risk × profile),
//! * [`risk`]: importance-sampling estimates of spatial heat-risk metrics,
//! * [`resample`]: block bootstrap, bias correction and cross-validation,
//! * [`synth`]: synthetic data with known truth,
//! * [`pipeline`]: configuration-driven orchestration used by the CLI.

// `!(x > 0.0)` style guards deliberately treat NaN as invalid
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body;
pub mod covariates;
pub mod datastore;
pub mod dependence;
pub mod error;
pub mod io;
pub mod margins;
pub mod numeric;
pub mod pipeline;
pub mod resample;
pub mod risk;
pub mod simulator;
pub mod synth;
pub mod tail;

pub use error::{Error, Result};

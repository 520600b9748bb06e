//! Station and climate-grid panels: CSV ingestion, summer filtering,
//! missingness masks, persistence and site geometry.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::numeric::stats;

/// Number of June–August days in any year.
pub const SUMMER_DAYS: u32 = 92;
const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Station,
    Grid,
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteKind::Station => f.write_str("station"),
            SiteKind::Grid => f.write_str("grid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMeta {
    pub site_id: String,
    pub lon: f64,
    pub lat: f64,
    /// Shortest distance to the coast in km; strictly positive.
    pub coast_dist: f64,
    pub kind: SiteKind,
}

/// A summer day: `day` counts from 1 June (0) to 31 August (91).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DayIndex {
    pub year: i32,
    pub day: u32,
}

impl DayIndex {
    pub fn new(year: i32, day: u32) -> Result<Self> {
        if day >= SUMMER_DAYS {
            return Err(Error::InvalidInput(format!(
                "day of summer {day} outside [0, {}]",
                SUMMER_DAYS - 1
            )));
        }
        Ok(Self { year, day })
    }

    /// Map a calendar date to a summer day, or `None` outside June–August.
    pub fn from_date(date: NaiveDate) -> Option<Self> {
        let june1 = NaiveDate::from_ymd_opt(date.year(), 6, 1)?;
        let offset = (date - june1).num_days();
        if (0..SUMMER_DAYS as i64).contains(&offset) {
            Some(Self {
                year: date.year(),
                day: offset as u32,
            })
        } else {
            None
        }
    }

    /// Position within the 7-day windows counted from 1 June.
    pub fn week(&self) -> u32 {
        self.day / 7
    }
}

impl fmt::Display for DayIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.year, self.day)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub lon0: f64,
    pub lat0: f64,
    pub lon1: f64,
    pub lat1: f64,
}

impl Bbox {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon0.min(self.lon1)
            && lon <= self.lon0.max(self.lon1)
            && lat >= self.lat0.min(self.lat1)
            && lat <= self.lat0.max(self.lat1)
    }
}

impl std::str::FromStr for Bbox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("bbox `{s}`: {e}")))?;
        match parts.as_slice() {
            [lon0, lat0, lon1, lat1] => Ok(Bbox {
                lon0: *lon0,
                lat0: *lat0,
                lon1: *lon1,
                lat1: *lat1,
            }),
            _ => Err(Error::InvalidInput(format!(
                "bbox `{s}` needs lon0,lat0,lon1,lat1"
            ))),
        }
    }
}

/// Irregularly observed daily maxima, time × site, with an explicit mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationPanel {
    pub sites: Vec<SiteMeta>,
    pub times: Vec<DayIndex>,
    /// Row-major time × site; NaN where unobserved.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl StationPanel {
    /// Assemble a panel, deriving the mask from finiteness of the values.
    pub fn from_values(sites: Vec<SiteMeta>, times: Vec<DayIndex>, values: Vec<f64>) -> Result<Self> {
        if values.len() != sites.len() * times.len() {
            return Err(Error::InvalidInput(format!(
                "values length {} does not match {} times x {} sites",
                values.len(),
                times.len(),
                sites.len()
            )));
        }
        let observed = values.iter().map(|v| v.is_finite()).collect();
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { f64::NAN })
            .collect();
        Ok(Self {
            sites,
            times,
            values,
            observed,
        })
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    #[inline]
    pub fn index(&self, t: usize, s: usize) -> usize {
        t * self.sites.len() + s
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize) -> Option<f64> {
        let i = self.index(t, s);
        self.observed[i].then(|| self.values[i])
    }

    pub fn row(&self, t: usize) -> (&[f64], &[bool]) {
        let n = self.sites.len();
        (&self.values[t * n..(t + 1) * n], &self.observed[t * n..(t + 1) * n])
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Iterate over observed `(t, s, value)` entries.
    pub fn observed_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.sites.len();
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(move |(i, _)| (i / n, i % n, self.values[i]))
    }

    /// Replace the values, keeping sites, times and mask. Entries that are
    /// unobserved in `self` are forced to NaN.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        let values = values
            .into_iter()
            .zip(&self.observed)
            .map(|(v, &o)| if o { v } else { f64::NAN })
            .collect();
        Self {
            sites: self.sites.clone(),
            times: self.times.clone(),
            values,
            observed: self.observed.clone(),
        }
    }

    /// Keep only sites inside `bbox`, then drop rows left with no observation.
    pub fn crop(&self, bbox: &Bbox) -> Self {
        let keep: Vec<usize> = (0..self.n_sites())
            .filter(|&s| bbox.contains(self.sites[s].lon, self.sites[s].lat))
            .collect();
        self.select_sites(&keep).drop_empty_rows()
    }

    pub fn select_sites(&self, keep: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.n_times() * keep.len());
        let mut observed = Vec::with_capacity(values.capacity());
        for t in 0..self.n_times() {
            for &s in keep {
                let i = self.index(t, s);
                values.push(self.values[i]);
                observed.push(self.observed[i]);
            }
        }
        Self {
            sites: keep.iter().map(|&s| self.sites[s].clone()).collect(),
            times: self.times.clone(),
            values,
            observed,
        }
    }

    pub fn drop_empty_rows(&self) -> Self {
        let n = self.n_sites();
        let keep: Vec<usize> = (0..self.n_times())
            .filter(|&t| self.observed[t * n..(t + 1) * n].iter().any(|&o| o))
            .collect();
        self.select_times(&keep)
    }

    pub fn select_times(&self, keep: &[usize]) -> Self {
        let n = self.n_sites();
        let mut values = Vec::with_capacity(keep.len() * n);
        let mut observed = Vec::with_capacity(keep.len() * n);
        for &t in keep {
            values.extend_from_slice(&self.values[t * n..(t + 1) * n]);
            observed.extend_from_slice(&self.observed[t * n..(t + 1) * n]);
        }
        Self {
            sites: self.sites.clone(),
            times: keep.iter().map(|&t| self.times[t]).collect(),
            values,
            observed,
        }
    }

    /// Row indices grouped by year, in time order.
    pub fn rows_by_year(&self) -> BTreeMap<i32, Vec<usize>> {
        let mut out: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (t, d) in self.times.iter().enumerate() {
            out.entry(d.year).or_default().push(t);
        }
        out
    }

    /// Check the mask/value invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        if self.values.len() != n * self.n_times() || self.observed.len() != self.values.len() {
            return Err(Error::Schema("panel matrix shape mismatch".into()));
        }
        for (i, (&v, &o)) in self.values.iter().zip(&self.observed).enumerate() {
            if v.is_finite() != o {
                return Err(Error::Schema(format!(
                    "mask inconsistent with value at time {}, site {}",
                    self.times[i / n],
                    self.sites[i % n].site_id
                )));
            }
        }
        for t in 0..self.n_times() {
            if !self.observed[t * n..(t + 1) * n].iter().any(|&o| o) {
                return Err(Error::Schema(format!("time {} has no observation", self.times[t])));
            }
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("times not strictly increasing".into()));
        }
        Ok(())
    }
}

/// Complete daily maxima on a regular lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateGrid {
    pub sites: Vec<SiteMeta>,
    pub times: Vec<DayIndex>,
    /// Row-major time × site; every entry finite.
    pub values: Vec<f64>,
}

impl ClimateGrid {
    pub fn new(sites: Vec<SiteMeta>, times: Vec<DayIndex>, values: Vec<f64>) -> Result<Self> {
        if values.len() != sites.len() * times.len() {
            return Err(Error::Schema("grid matrix shape mismatch".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!(
                "grid value missing at time {}, site {}",
                times[i / sites.len()],
                sites[i % sites.len()].site_id
            )));
        }
        Ok(Self {
            sites,
            times,
            values,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// The full series at one site.
    pub fn series(&self, s: usize) -> Vec<f64> {
        let n = self.n_sites();
        (0..self.n_times()).map(|t| self.values[t * n + s]).collect()
    }

    /// Check that coordinates sit on a regular lon/lat lattice.
    pub fn check_lattice(&self, rel_tol: f64) -> Result<()> {
        for (name, coords) in [
            ("lon", self.sites.iter().map(|s| s.lon).collect::<Vec<_>>()),
            ("lat", self.sites.iter().map(|s| s.lat).collect::<Vec<_>>()),
        ] {
            let mut uniq = coords.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            if uniq.len() < 2 {
                continue;
            }
            let step = uniq.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            for c in &coords {
                let k = (c - uniq[0]) / step;
                if (k - k.round()).abs() > rel_tol {
                    return Err(Error::Schema(format!(
                        "grid {name} coordinate {c} off the lattice (step {step})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// View the grid as a fully observed panel.
    pub fn to_panel(&self) -> StationPanel {
        StationPanel {
            sites: self.sites.clone(),
            times: self.times.clone(),
            values: self.values.clone(),
            observed: vec![true; self.values.len()],
        }
    }

    pub fn crop(&self, bbox: &Bbox) -> Self {
        let keep: Vec<usize> = (0..self.n_sites())
            .filter(|&s| bbox.contains(self.sites[s].lon, self.sites[s].lat))
            .collect();
        let n = self.n_sites();
        let mut values = Vec::with_capacity(self.n_times() * keep.len());
        for t in 0..self.n_times() {
            values.extend(keep.iter().map(|&s| self.values[t * n + s]));
        }
        Self {
            sites: keep.iter().map(|&s| self.sites[s].clone()).collect(),
            times: self.times.clone(),
            values,
        }
    }
}

/// Temporal covariates for one summer day.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeCovariates {
    /// Irish mean temperature anomaly (°C).
    pub m_i: f64,
    /// Global mean temperature anomaly (°C).
    pub m_g: f64,
    pub co2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSeries {
    pub times: Vec<DayIndex>,
    pub values: Vec<TimeCovariates>,
    #[serde(skip)]
    index: HashMap<DayIndex, usize>,
}

impl CovariateSeries {
    pub fn new(times: Vec<DayIndex>, values: Vec<TimeCovariates>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput("covariate times/values length mismatch".into()));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(v.m_i.is_finite() && v.m_g.is_finite() && v.co2.is_finite()))
        {
            return Err(Error::Schema(format!("non-finite covariate {v:?}")));
        }
        let index = times.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Ok(Self {
            times,
            values,
            index,
        })
    }

    pub fn get(&self, t: DayIndex) -> Option<TimeCovariates> {
        self.index.get(&t).map(|&i| self.values[i])
    }

    /// Covariates for every row of `times`, or an error naming the first gap.
    pub fn align(&self, times: &[DayIndex]) -> Result<Vec<TimeCovariates>> {
        times
            .iter()
            .map(|&t| {
                self.get(t)
                    .ok_or_else(|| Error::Schema(format!("no covariates for {t}")))
            })
            .collect()
    }

    /// Summer-average covariates for a year, representing that year's conditions.
    pub fn year_mean(&self, year: i32) -> Option<TimeCovariates> {
        let rows: Vec<&TimeCovariates> = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| t.year == year)
            .map(|(_, v)| v)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(TimeCovariates {
            m_i: rows.iter().map(|v| v.m_i).sum::<f64>() / n,
            m_g: rows.iter().map(|v| v.m_g).sum::<f64>() / n,
            co2: rows.iter().map(|v| v.co2).sum::<f64>() / n,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv_reader(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("missing column `{name}`"),
                })
        };
        let (cy, cd, ci, cg, cc) = (col("year")?, col("day")?, col("m_i")?, col("m_g")?, col("co2")?);
        let mut rows = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let year: i32 = parse_field(&rec, cy, line, "year")?;
            let day: u32 = parse_field(&rec, cd, line, "day")?;
            let t = DayIndex::new(year, day).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            let v = TimeCovariates {
                m_i: parse_field(&rec, ci, line, "m_i")?,
                m_g: parse_field(&rec, cg, line, "m_g")?,
                co2: parse_field(&rec, cc, line, "co2")?,
            };
            if rows.insert(t, v).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate covariate row for {t}"),
                });
            }
        }
        let (times, values) = rows.into_iter().unzip();
        Self::new(times, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["year", "day", "m_i", "m_g", "co2"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([
                t.year.to_string(),
                t.day.to_string(),
                fmt_num(v.m_i),
                fmt_num(v.m_g),
                fmt_num(v.co2),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Station,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedPanel {
    Station(StationPanel),
    Grid(ClimateGrid),
}

/// Load a long-format CSV with header
/// `site_id,lon,lat,coast_dist,year,day,value`, where `day` is the day of
/// summer and a blank `value` marks a missing observation.
pub fn load_panel(path: &Path, schema: Schema) -> Result<LoadedPanel> {
    let rdr = csv_reader(path)?;
    let long = read_long(rdr, TimeColumns::SummerDay)?;
    assemble(long, schema)
}

pub fn load_station_panel(path: &Path) -> Result<StationPanel> {
    match load_panel(path, Schema::Station)? {
        LoadedPanel::Station(p) => Ok(p),
        LoadedPanel::Grid(_) => unreachable!(),
    }
}

pub fn load_climate_grid(path: &Path) -> Result<ClimateGrid> {
    match load_panel(path, Schema::Grid)? {
        LoadedPanel::Grid(g) => Ok(g),
        LoadedPanel::Station(_) => unreachable!(),
    }
}

/// Parse long-format panel CSV from an in-memory string (same schema as
/// [`load_panel`]).
pub fn parse_panel(text: &str, schema: Schema) -> Result<LoadedPanel> {
    let rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let long = read_long(rdr, TimeColumns::SummerDay)?;
    assemble(long, schema)
}

/// Daily series indexed by calendar date, prior to summer filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPanel {
    pub sites: Vec<SiteMeta>,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

/// Load a calendar-dated CSV with header
/// `site_id,lon,lat,coast_dist,date,value` (ISO dates).
pub fn load_daily(path: &Path) -> Result<DailyPanel> {
    let rdr = csv_reader(path)?;
    let long = read_long(rdr, TimeColumns::Date)?;
    let site_index: HashMap<&str, usize> = long
        .sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.site_id.as_str(), i))
        .collect();
    let dates: BTreeSet<NaiveDate> = long.rows.iter().map(|r| r.date.expect("dated row")).collect();
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let date_index: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let n = long.sites.len();
    let mut values = vec![f64::NAN; dates.len() * n];
    let mut observed = vec![false; dates.len() * n];
    for r in &long.rows {
        let i = date_index[&r.date.expect("dated row")] * n + site_index[r.site.as_str()];
        if let Some(v) = r.value {
            values[i] = v;
            observed[i] = true;
        }
    }
    Ok(DailyPanel {
        sites: long.sites,
        dates,
        values,
        observed,
    })
}

/// Keep June–August days, assign summer day indices and drop days with no
/// observed site.
pub fn summer_filter(daily: &DailyPanel) -> StationPanel {
    let n = daily.sites.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    for (t, &date) in daily.dates.iter().enumerate() {
        let Some(day) = DayIndex::from_date(date) else {
            continue;
        };
        let row_obs = &daily.observed[t * n..(t + 1) * n];
        if !row_obs.iter().any(|&o| o) {
            continue;
        }
        times.push(day);
        values.extend_from_slice(&daily.values[t * n..(t + 1) * n]);
        observed.extend_from_slice(row_obs);
    }
    StationPanel {
        sites: daily.sites.clone(),
        times,
        values,
        observed,
    }
}

/// Per-site type-7 empirical quantiles of the grid series; `out[s][k]` is the
/// quantile at `taus[k]` for grid site `s`.
pub fn empirical_quantiles(grid: &ClimateGrid, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
    if taus.iter().any(|&t| !(0.01..=0.99).contains(&t)) {
        return Err(Error::InvalidInput("taus must lie in [0.01, 0.99]".into()));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("taus must be strictly increasing".into()));
    }
    (0..grid.n_sites())
        .map(|s| {
            stats::quantiles(&grid.series(s), taus).ok_or_else(|| {
                Error::InvalidInput(format!("empty series at grid site {}", grid.sites[s].site_id))
            })
        })
        .collect()
}

/// Write a panel in the long CSV format read by [`load_panel`].
pub fn save_panel_csv(panel: &StationPanel, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["site_id", "lon", "lat", "coast_dist", "year", "day", "value"])?;
    for t in 0..panel.n_times() {
        for (s, site) in panel.sites.iter().enumerate() {
            let day = panel.times[t];
            let value = panel.get(t, s).map(fmt_num).unwrap_or_default();
            w.write_record([
                site.site_id.clone(),
                fmt_num(site.lon),
                fmt_num(site.lat),
                fmt_num(site.coast_dist),
                day.year.to_string(),
                day.day.to_string(),
                value,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Persist a panel as a directory with `meta.csv`, `values.csv` and
/// `mask.csv`. `scale` is recorded in `meta.csv` for standardized panels.
pub fn save_panel_dir(panel: &StationPanel, dir: &Path, scale: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = csv_writer(&dir.join("meta.csv"))?;
    meta.write_record(["site_id", "lon", "lat", "coast_dist", "kind", "scale"])?;
    for s in &panel.sites {
        meta.write_record([
            s.site_id.clone(),
            fmt_num(s.lon),
            fmt_num(s.lat),
            fmt_num(s.coast_dist),
            s.kind.to_string(),
            scale.to_string(),
        ])?;
    }
    meta.flush().map_err(|e| Error::io(dir, e))?;

    let mut header = vec!["year".to_string(), "day".to_string()];
    header.extend(panel.sites.iter().map(|s| s.site_id.clone()));
    let mut values = csv_writer(&dir.join("values.csv"))?;
    let mut mask = csv_writer(&dir.join("mask.csv"))?;
    values.write_record(&header)?;
    mask.write_record(&header)?;
    for t in 0..panel.n_times() {
        let d = panel.times[t];
        let mut vrow = vec![d.year.to_string(), d.day.to_string()];
        let mut mrow = vrow.clone();
        for s in 0..panel.n_sites() {
            let v = panel.get(t, s);
            vrow.push(v.map(fmt_num).unwrap_or_default());
            mrow.push(if v.is_some() { "1" } else { "0" }.to_string());
        }
        values.write_record(&vrow)?;
        mask.write_record(&mrow)?;
    }
    values.flush().map_err(|e| Error::io(dir, e))?;
    mask.flush().map_err(|e| Error::io(dir, e))
}

/// Load a panel directory written by [`save_panel_dir`]; returns the panel
/// and its scale tag.
pub fn load_panel_dir(dir: &Path) -> Result<(StationPanel, String)> {
    let mut meta = csv_reader(&dir.join("meta.csv"))?;
    let mut sites = Vec::new();
    let mut scale = String::from("data");
    for rec in meta.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let kind = match rec.get(4).unwrap_or("station") {
            "grid" => SiteKind::Grid,
            _ => SiteKind::Station,
        };
        scale = rec.get(5).unwrap_or("data").to_string();
        sites.push(SiteMeta {
            site_id: rec.get(0).unwrap_or_default().to_string(),
            lon: parse_field(&rec, 1, line, "lon")?,
            lat: parse_field(&rec, 2, line, "lat")?,
            coast_dist: parse_field(&rec, 3, line, "coast_dist")?,
            kind,
        });
    }
    let mut values_rdr = csv_reader(&dir.join("values.csv"))?;
    let mut mask_rdr = csv_reader(&dir.join("mask.csv"))?;
    let n = sites.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    for (vrec, mrec) in values_rdr.records().zip(mask_rdr.records()) {
        let (vrec, mrec) = (vrec?, mrec?);
        let line = vrec.position().map_or(0, |p| p.line());
        if vrec.len() != n + 2 || mrec.len() != n + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns", n + 2),
            });
        }
        let year: i32 = parse_field(&vrec, 0, line, "year")?;
        let day: u32 = parse_field(&vrec, 1, line, "day")?;
        times.push(DayIndex::new(year, day)?);
        for s in 0..n {
            let obs = mrec.get(s + 2) == Some("1");
            observed.push(obs);
            values.push(if obs {
                parse_field(&vrec, s + 2, line, "value")?
            } else {
                f64::NAN
            });
        }
    }
    let panel = StationPanel {
        sites,
        times,
        values,
        observed,
    };
    panel.validate()?;
    Ok((panel, scale))
}

/// Local equirectangular projection to kilometres about a reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    /// Centre the projection on the centroid of the given sites.
    pub fn about_centroid<'a>(sites: impl IntoIterator<Item = &'a SiteMeta>) -> Self {
        let (mut lon, mut lat, mut n) = (0.0, 0.0, 0.0);
        for s in sites {
            lon += s.lon;
            lat += s.lat;
            n += 1.0;
        }
        if n == 0.0 {
            return Self { lon0: 0.0, lat0: 0.0 };
        }
        Self {
            lon0: lon / n,
            lat0: lat / n,
        }
    }

    pub fn project(&self, lon: f64, lat: f64) -> [f64; 2] {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        [k * (lon - self.lon0) * self.lat0.to_radians().cos(), k * (lat - self.lat0)]
    }

    /// Inverse of [`Projection::project`].
    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        (self.lon0 + x / (k * self.lat0.to_radians().cos()), self.lat0 + y / k)
    }

    pub fn coords(&self, sites: &[SiteMeta]) -> Vec<[f64; 2]> {
        sites.iter().map(|s| self.project(s.lon, s.lat)).collect()
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Row-major symmetric distance matrix in km.
pub fn distance_matrix(coords: &[[f64; 2]]) -> Vec<f64> {
    let n = coords.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let h = distance(coords[i], coords[j]);
            d[i * n + j] = h;
            d[j * n + i] = h;
        }
    }
    d
}

/// Index of the nearest `candidates` point for every `targets` point.
pub fn nearest_indices(targets: &[[f64; 2]], candidates: &[[f64; 2]]) -> Vec<usize> {
    targets
        .iter()
        .map(|&t| {
            candidates
                .iter()
                .enumerate()
                .min_by(|a, b| distance(t, *a.1).total_cmp(&distance(t, *b.1)))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CSV plumbing

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    col: usize,
    line: u64,
    name: &str,
) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = rec.get(col).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field `{name}`"),
    })?;
    raw.trim().parse::<T>().map_err(|e| Error::Parse {
        line,
        message: format!("field `{name}` = `{raw}`: {e}"),
    })
}

#[derive(Clone, Copy)]
enum TimeColumns {
    SummerDay,
    Date,
}

struct LongRow {
    site: String,
    time: Option<DayIndex>,
    date: Option<NaiveDate>,
    value: Option<f64>,
}

struct LongTable {
    sites: Vec<SiteMeta>,
    rows: Vec<LongRow>,
}

fn read_long<R: std::io::Read>(mut rdr: csv::Reader<R>, cols: TimeColumns) -> Result<LongTable> {
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let c_site = find("site_id")?;
    let c_lon = find("lon")?;
    let c_lat = find("lat")?;
    let c_coast = find("coast_dist")?;
    let c_value = find("value")?;
    let time_cols = match cols {
        TimeColumns::SummerDay => (find("year")?, find("day")?),
        TimeColumns::Date => (find("date")?, usize::MAX),
    };

    let mut sites: Vec<SiteMeta> = Vec::new();
    let mut site_index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(usize, i64), u64> = HashMap::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let site_id = rec.get(c_site).unwrap_or_default().to_string();
        if site_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty site_id".into(),
            });
        }
        let lon: f64 = parse_field(&rec, c_lon, line, "lon")?;
        let lat: f64 = parse_field(&rec, c_lat, line, "lat")?;
        let coast: f64 = parse_field(&rec, c_coast, line, "coast_dist")?;
        if coast <= 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("coast_dist must be positive, got {coast}"),
            });
        }
        let (time, date, key) = match cols {
            TimeColumns::SummerDay => {
                let year: i32 = parse_field(&rec, time_cols.0, line, "year")?;
                let day: u32 = parse_field(&rec, time_cols.1, line, "day")?;
                let t = DayIndex::new(year, day).map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
                (Some(t), None, i64::from(year) * 1000 + i64::from(day))
            }
            TimeColumns::Date => {
                let raw = rec.get(time_cols.0).unwrap_or_default();
                let d = NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
                    line,
                    message: format!("date `{raw}`: {e}"),
                })?;
                (None, Some(d), i64::from(d.num_days_from_ce()))
            }
        };
        let raw_value = rec.get(c_value).unwrap_or_default().trim();
        let value = if raw_value.is_empty() || raw_value.eq_ignore_ascii_case("na") {
            None
        } else {
            let v: f64 = raw_value.parse().map_err(|e| Error::Parse {
                line,
                message: format!("field `value` = `{raw_value}`: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: "non-finite value".into(),
                });
            }
            Some(v)
        };
        let idx = match site_index.get(&site_id) {
            Some(&i) => {
                let s = &sites[i];
                if (s.lon - lon).abs() > 1e-9 || (s.lat - lat).abs() > 1e-9 || (s.coast_dist - coast).abs() > 1e-9 {
                    return Err(Error::Parse {
                        line,
                        message: format!("metadata for site {site_id} differs from earlier rows"),
                    });
                }
                i
            }
            None => {
                site_index.insert(site_id.clone(), sites.len());
                sites.push(SiteMeta {
                    site_id: site_id.clone(),
                    lon,
                    lat,
                    coast_dist: coast,
                    kind: SiteKind::Station,
                });
                sites.len() - 1
            }
        };
        if seen.insert((idx, key), line).is_some() {
            let (year, day) = match (time, date) {
                (Some(t), _) => (t.year, t.day),
                (_, Some(d)) => (d.year(), d.ordinal()),
                _ => unreachable!(),
            };
            return Err(Error::Conflict {
                site: site_id,
                year,
                day,
            });
        }
        rows.push(LongRow {
            site: site_id,
            time,
            date,
            value,
        });
    }
    Ok(LongTable { sites, rows })
}

fn assemble(long: LongTable, schema: Schema) -> Result<LoadedPanel> {
    let mut sites = long.sites;
    if schema == Schema::Grid {
        for s in &mut sites {
            s.kind = SiteKind::Grid;
        }
    }
    let site_index: HashMap<&str, usize> = sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.site_id.as_str(), i))
        .collect();
    let times: BTreeSet<DayIndex> = long.rows.iter().map(|r| r.time.expect("summer row")).collect();
    let times: Vec<DayIndex> = times.into_iter().collect();
    let time_index: HashMap<DayIndex, usize> = times.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let n = sites.len();
    let mut values = vec![f64::NAN; times.len() * n];
    let mut observed = vec![false; times.len() * n];
    for r in &long.rows {
        let t = r.time.expect("summer row");
        match (r.value, schema) {
            (Some(v), _) => {
                let i = time_index[&t] * n + site_index[r.site.as_str()];
                values[i] = v;
                observed[i] = true;
            }
            (None, Schema::Grid) => {
                return Err(Error::Schema(format!("grid value missing for site {} at {t}", r.site)));
            }
            (None, Schema::Station) => {}
        }
    }
    let sites_owned = sites.clone();
    match schema {
        Schema::Grid => {
            if let Some(i) = observed.iter().position(|&o| !o) {
                return Err(Error::Schema(format!(
                    "grid has no row for site {} at {}",
                    sites_owned[i % n].site_id,
                    times[i / n]
                )));
            }
            Ok(LoadedPanel::Grid(ClimateGrid::new(sites_owned, times, values)?))
        }
        Schema::Station => {
            let panel = StationPanel {
                sites: sites_owned,
                times,
                values,
                observed,
            }
            .drop_empty_rows();
            Ok(LoadedPanel::Station(panel))
        }
    }
}

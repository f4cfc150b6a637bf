//! Ingestion of station-level ensemble forecasts and observations,
//! derivation of the covariate sets, standardization and date splits.
//!
//! Forecast CSV (long format, one row per station/date/variable):
//!
//! ```text
//! station_id,date,variable,member_01,...,member_50,control
//! ```
//!
//! Observation CSV:
//!
//! ```text
//! station_id,date,obs_u,obs_v
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_MEMBERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    U,
    V,
    Wspd,
    Temp,
    Pres,
    Sh,
}

impl Variable {
    pub const ALL: [Variable; 6] = [
        Variable::U,
        Variable::V,
        Variable::Wspd,
        Variable::Temp,
        Variable::Pres,
        Variable::Sh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::U => "u",
            Variable::V => "v",
            Variable::Wspd => "wspd",
            Variable::Temp => "temp",
            Variable::Pres => "pres",
            Variable::Sh => "sh",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown variable '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub station_id: u32,
    pub date: NaiveDate,
    pub variable: Variable,
    pub members: Vec<f64>,
    pub control: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub station_id: u32,
    pub date: NaiveDate,
    pub obs_u: f64,
    pub obs_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    pub mean: f64,
    pub log_sd: f64,
}

/// Ensemble mean and log of the sample standard deviation (divisor n - 1).
pub fn ensemble_stats(members: &[f64]) -> Result<EnsembleStats> {
    if members.len() < 2 {
        return Err(Error::invalid("ensemble needs at least two members"));
    }
    if let Some(x) = members.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite ensemble member {x}")));
    }
    let n = members.len() as f64;
    let mean = members.iter().sum::<f64>() / n;
    let ss: f64 = members.iter().map(|x| (x - mean) * (x - mean)).sum();
    if ss == 0.0 {
        return Err(Error::DegenerateEnsemble(format!("{} identical members", members.len())));
    }
    Ok(EnsembleStats {
        mean,
        log_sd: (ss / (n - 1.0)).sqrt().ln(),
    })
}

/// Meteorological-convention-free direction of the vector (u, v) in degrees,
/// `180 * atan2(v, u) / pi mod 360`.
pub fn wind_direction(u: f64, v: f64) -> Result<f64> {
    if u == 0.0 && v == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let d = v.atan2(u).to_degrees().rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative angles.
    Ok(if d >= 360.0 { 0.0 } else { d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovariateSet {
    #[serde(rename = "C")]
    C,
    #[serde(rename = "Cplus")]
    CPlus,
}

impl FromStr for CovariateSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" => Ok(CovariateSet::C),
            "Cplus" | "cplus" | "C+" => Ok(CovariateSet::CPlus),
            other => Err(Error::Config(format!("unknown covariate set '{other}' (expected C or Cplus)"))),
        }
    }
}

pub const C_NAMES: [&str; 11] = [
    "mean_u", "ctrl_u", "sd_u", "mean_v", "ctrl_v", "sd_v", "mean_wspd", "ctrl_wspd", "sd_wspd", "mean_wdir",
    "ctrl_wdir",
];

pub const CPLUS_NAMES: [&str; 15] = [
    "mean_u", "ctrl_u", "sd_u", "mean_v", "ctrl_v", "sd_v", "mean_temp", "ctrl_temp", "sd_temp", "mean_pres",
    "ctrl_pres", "sd_pres", "mean_sh", "ctrl_sh", "sd_sh",
];

impl CovariateSet {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            CovariateSet::C => &C_NAMES,
            CovariateSet::CPlus => &CPLUS_NAMES,
        }
    }

    pub fn len(self) -> usize {
        self.names().len()
    }

    pub fn tag(self) -> &'static str {
        match self {
            CovariateSet::C => "C",
            CovariateSet::CPlus => "Cplus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector {
    pub set: CovariateSet,
    pub values: Vec<f64>,
}

impl CovariateVector {
    pub fn new(set: CovariateSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != set.len() {
            return Err(Error::Schema(format!(
                "covariate set {} needs {} values, got {}",
                set.tag(),
                set.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("covariate {} is not finite", set.names()[i])));
        }
        Ok(Self { set, values })
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.set
            .names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
            .ok_or_else(|| Error::Schema(format!("covariate '{name}' not in set {}", self.set.tag())))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.set.names().iter().copied().zip(self.values.iter().copied())
    }
}

fn summary(records: &[&RawRecord], var: Variable) -> Result<Option<(EnsembleStats, f64)>> {
    let Some(r) = records.iter().find(|r| r.variable == var) else {
        return Ok(None);
    };
    let stats = ensemble_stats(&r.members)
        .map_err(|e| match e {
            Error::DegenerateEnsemble(m) => {
                Error::DegenerateEnsemble(format!("station {} {} {}: {m}", r.station_id, r.date, var))
            }
            other => other,
        })?;
    Ok(Some((stats, r.control)))
}

fn require(records: &[&RawRecord], var: Variable) -> Result<(EnsembleStats, f64)> {
    summary(records, var)?.ok_or_else(|| Error::Schema(format!("missing variable '{var}'")))
}

/// Derives the covariate vector for one station and day.
///
/// Wind-speed members are computed member-wise from the u and v members when
/// no native `wspd` record is present.
pub fn build_covariates(records: &[&RawRecord], set: CovariateSet) -> Result<CovariateVector> {
    let (u, u_ctrl) = require(records, Variable::U)?;
    let (v, v_ctrl) = require(records, Variable::V)?;
    let mut values = vec![u.mean, u_ctrl, u.log_sd, v.mean, v_ctrl, v.log_sd];
    match set {
        CovariateSet::C => {
            let (w, w_ctrl) = match summary(records, Variable::Wspd)? {
                Some(s) => s,
                None => derived_wspd(records)?,
            };
            values.extend([w.mean, w_ctrl, w.log_sd]);
            values.push(wind_direction(u.mean, v.mean)?);
            values.push(wind_direction(u_ctrl, v_ctrl)?);
        }
        CovariateSet::CPlus => {
            for var in [Variable::Temp, Variable::Pres, Variable::Sh] {
                let (s, ctrl) = require(records, var)?;
                values.extend([s.mean, ctrl, s.log_sd]);
            }
        }
    }
    CovariateVector::new(set, values)
}

fn derived_wspd(records: &[&RawRecord]) -> Result<(EnsembleStats, f64)> {
    let u = records.iter().find(|r| r.variable == Variable::U).expect("checked by caller");
    let v = records.iter().find(|r| r.variable == Variable::V).expect("checked by caller");
    let members: Vec<f64> = u.members.iter().zip(&v.members).map(|(a, b)| a.hypot(*b)).collect();
    Ok((ensemble_stats(&members)?, u.control.hypot(v.control)))
}

/// Per-quantity sample means and standard deviations (divisor n - 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl StandardizationStats {
    /// Column statistics of `rows` (each row one observation).
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("standardization needs at least two rows"));
        };
        if rows.len() < 2 {
            return Err(Error::invalid("standardization needs at least two rows"));
        }
        let p = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x / n;
            }
        }
        let mut sd = vec![0.0; p];
        for r in rows {
            for j in 0..p {
                sd[j] += (r[j] - mean[j]).powi(2);
            }
        }
        for (j, s) in sd.iter_mut().enumerate() {
            *s = (*s / (n - 1.0)).sqrt();
            if !(*s > 0.0) {
                return Err(Error::DegenerateQuantity(format!("column {j} has zero standard deviation")));
            }
        }
        Ok(Self { mean, sd })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Schema(format!(
                "expected {} values for standardization, got {}",
                self.len(),
                values.len()
            )));
        }
        if let Some(j) = self.sd.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateQuantity(format!("column {j} has zero standard deviation")));
        }
        Ok(())
    }

    pub fn standardize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values)?;
        Ok(values
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn destandardize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values)?;
        Ok(values
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(z, (m, s))| z * s + m)
            .collect())
    }
}

/// Train / validation / test dates for a chronological split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<NaiveDate>,
    pub validation: Vec<NaiveDate>,
    pub test: Vec<NaiveDate>,
}

impl DatasetSplit {
    /// The first `train_days` distinct dates train, the rest test. The
    /// validation set is the last `validation_fraction` of the training dates
    /// (they stay in `train` as well; models that tune on them carve them out).
    pub fn chronological(dates: &[NaiveDate], train_days: usize, validation_fraction: f64) -> Result<Self> {
        let all: Vec<NaiveDate> = dates.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if train_days == 0 || train_days >= all.len() {
            return Err(Error::Config(format!(
                "train_days must lie in [1, {}), got {train_days}",
                all.len()
            )));
        }
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        let train = all[..train_days].to_vec();
        let test = all[train_days..].to_vec();
        let n_val = (train.len() as f64 * validation_fraction).round() as usize;
        let validation = train[train.len() - n_val..].to_vec();
        Ok(Self {
            train,
            validation,
            test,
        })
    }

    pub fn is_train(&self, d: NaiveDate) -> bool {
        self.train.binary_search(&d).is_ok()
    }

    pub fn is_test(&self, d: NaiveDate) -> bool {
        self.test.binary_search(&d).is_ok()
    }
}

/// Derived covariates and observation for one station and day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationDay {
    pub station_id: u32,
    pub date: NaiveDate,
    pub cov_c: CovariateVector,
    pub cov_cplus: CovariateVector,
    pub obs: [f64; 2],
}

/// Groups forecasts by (station, date), derives both covariate sets and
/// joins observations. Days without an observation are skipped.
pub fn assemble(records: &[RawRecord], observations: &[Observation]) -> Result<Vec<StationDay>> {
    let mut grouped: BTreeMap<(u32, NaiveDate), Vec<&RawRecord>> = BTreeMap::new();
    for r in records {
        let group = grouped.entry((r.station_id, r.date)).or_default();
        if group.iter().any(|g| g.variable == r.variable) {
            return Err(Error::Schema(format!(
                "duplicate record for station {} date {} variable {}",
                r.station_id, r.date, r.variable
            )));
        }
        group.push(r);
    }
    let mut obs: BTreeMap<(u32, NaiveDate), [f64; 2]> = BTreeMap::new();
    for o in observations {
        if obs.insert((o.station_id, o.date), [o.obs_u, o.obs_v]).is_some() {
            return Err(Error::Schema(format!(
                "duplicate observation for station {} date {}",
                o.station_id, o.date
            )));
        }
    }
    let mut out = Vec::with_capacity(grouped.len());
    for ((station_id, date), recs) in grouped {
        let Some(y) = obs.get(&(station_id, date)) else {
            continue;
        };
        if !(y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::Schema(format!("non-finite observation at station {station_id} date {date}")));
        }
        out.push(StationDay {
            station_id,
            date,
            cov_c: build_covariates(&recs, CovariateSet::C)?,
            cov_cplus: build_covariates(&recs, CovariateSet::CPlus)?,
            obs: *y,
        });
    }
    Ok(out)
}

fn forecast_header() -> Vec<String> {
    let mut h = vec!["station_id".to_string(), "date".into(), "variable".into()];
    h.extend((1..=N_MEMBERS).map(|i| format!("member_{i:02}")));
    h.push("control".into());
    h
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Schema(format!("cannot parse {what} '{field}' as a number")))
}

fn parse_date(field: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field.trim(), "%Y-%m-%d")
        .map_err(|_| Error::Schema(format!("cannot parse date '{field}' (expected YYYY-MM-DD)")))
}

fn parse_station(field: &str) -> Result<u32> {
    field
        .trim()
        .parse::<u32>()
        .map_err(|_| Error::Schema(format!("cannot parse station id '{field}'")))
}

pub fn read_forecasts(path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = open_reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != forecast_header() {
        return Err(Error::Schema(format!(
            "{}: forecast header must be station_id,date,variable,member_01..member_{N_MEMBERS},control",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let members = (0..N_MEMBERS)
            .map(|i| parse_f64(&row[3 + i], "member"))
            .collect::<Result<Vec<_>>>()?;
        out.push(RawRecord {
            station_id: parse_station(&row[0])?,
            date: parse_date(&row[1])?,
            variable: row[2].trim().parse()?,
            members,
            control: parse_f64(&row[3 + N_MEMBERS], "control")?,
        });
    }
    Ok(out)
}

pub fn write_forecasts(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(forecast_header())?;
    for r in records {
        if r.members.len() != N_MEMBERS {
            return Err(Error::Schema(format!("record has {} members, expected {N_MEMBERS}", r.members.len())));
        }
        let mut row = vec![r.station_id.to_string(), r.date.to_string(), r.variable.to_string()];
        row.extend(r.members.iter().map(|x| fmt_num(*x)));
        row.push(fmt_num(r.control));
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let mut rdr = open_reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["station_id", "date", "obs_u", "obs_v"] {
        return Err(Error::Schema(format!(
            "{}: observation header must be station_id,date,obs_u,obs_v",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        out.push(Observation {
            station_id: parse_station(&row[0])?,
            date: parse_date(&row[1])?,
            obs_u: parse_f64(&row[2], "obs_u")?,
            obs_v: parse_f64(&row[3], "obs_v")?,
        });
    }
    Ok(out)
}

pub fn write_observations(path: &Path, obs: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["station_id", "date", "obs_u", "obs_v"])?;
    for o in obs {
        w.write_record([o.station_id.to_string(), o.date.to_string(), fmt_num(o.obs_u), fmt_num(o.obs_v)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes the derived covariates of one set together with the observations.
pub fn write_covariates(path: &Path, days: &[StationDay], set: CovariateSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["station_id".to_string(), "date".into()];
    header.extend(set.names().iter().map(|s| s.to_string()));
    header.extend(["obs_u".to_string(), "obs_v".to_string()]);
    w.write_record(&header)?;
    for d in days {
        let cov = match set {
            CovariateSet::C => &d.cov_c,
            CovariateSet::CPlus => &d.cov_cplus,
        };
        let mut row = vec![d.station_id.to_string(), d.date.to_string()];
        row.extend(cov.values.iter().map(|x| fmt_num(*x)));
        row.extend([fmt_num(d.obs[0]), fmt_num(d.obs[1])]);
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Shortest representation that round-trips to the same f64.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

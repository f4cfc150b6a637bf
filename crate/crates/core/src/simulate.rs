//! Synthetic ensemble forecasts and observations with a known conditional
//! law.
//!
//! Each station carries latent daily weather (AR(1) processes). The raw
//! ensemble scatters around the latent state with a common forecast error
//! and a time-varying spread. Observations are drawn from a generator-specific
//! law given the derived covariates.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{Family, PairCopula, Rotation};
use crate::dataio::{build_covariates, fmt_num, CovariateSet, Observation, RawRecord, Variable, N_MEMBERS};
use crate::emos::{emos_predict, EmosCoefficients, EmosVariant};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::special::{norm_cdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// BIV-EMOS law with known coefficients.
    GaussianLinear,
    /// Gaussian margins; each response is tied to its ensemble mean by a
    /// Clayton copula and the two responses by a second Clayton copula.
    ClaytonDependence,
    /// Wind regimes around three prevailing directions, each with its own
    /// error correlation.
    ThreeModeDirection,
}

impl Generator {
    pub fn tag(self) -> &'static str {
        match self {
            Generator::GaussianLinear => "gaussian-linear",
            Generator::ClaytonDependence => "clayton-dependence",
            Generator::ThreeModeDirection => "three-mode-direction",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Generator::GaussianLinear,
            Generator::ClaytonDependence,
            Generator::ThreeModeDirection,
        ]
        .into_iter()
        .find(|g| g.tag() == s)
        .ok_or_else(|| Error::Config(format!("unknown generator '{s}'")))
    }
}

/// Coefficients of the gaussian-linear law, in BIV-EMOS layout.
pub const DEFAULT_COEFFICIENTS: [f64; 13] = [
    0.3, 0.6, 0.35, //
    -0.2, 0.55, 0.4, //
    0.1, 0.5, //
    0.0, 0.45, //
    0.4, 4e-4, -3e-4,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub stations: u32,
    pub days: u32,
    pub start_date: NaiveDate,
    pub generator: Generator,
    /// BIV-EMOS coefficients of the gaussian-linear law.
    pub coefficients: Vec<f64>,
    /// Multiplier of the observation noise; zero makes observations a
    /// deterministic function of the covariates.
    pub noise_scale: f64,
    /// Standard deviation of the latent log ensemble spread.
    pub spread_variability: f64,
    pub clayton_theta_covariate: f64,
    pub clayton_theta_top: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            stations: 5,
            days: 1000,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            generator: Generator::GaussianLinear,
            coefficients: DEFAULT_COEFFICIENTS.to_vec(),
            noise_scale: 1.0,
            spread_variability: 0.6,
            clayton_theta_covariate: 4.0,
            clayton_theta_top: 3.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stations == 0 || self.days == 0 {
            return Err(Error::Config("stations and days must be positive".into()));
        }
        if self.coefficients.len() != 13 || self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("coefficients must be 13 finite values".into()));
        }
        for (name, x) in [
            ("noise_scale", self.noise_scale),
            ("spread_variability", self.spread_variability),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        for (name, th) in [
            ("clayton_theta_covariate", self.clayton_theta_covariate),
            ("clayton_theta_top", self.clayton_theta_top),
        ] {
            if !(th > 0.0 && th <= 28.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 28]")));
            }
        }
        Ok(())
    }
}

/// Ground truth for one station and day. For the Gaussian generators the
/// five values are the conditional bivariate normal parameters; for
/// clayton-dependence they are (mean, sd) of the u and v margins and the
/// covariate PIT of the u ensemble mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub station_id: u32,
    pub date: NaiveDate,
    pub p: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<RawRecord>,
    pub observations: Vec<Observation>,
    pub truth: Vec<TruthRow>,
}

const PHI: f64 = 0.7;
const WIND_SD: f64 = 3.0;
const FORECAST_ERROR_SD: f64 = 1.0;

struct Ar1 {
    mean: f64,
    sd: f64,
    state: f64,
}

impl Ar1 {
    fn new<R: Rng>(mean: f64, sd: f64, rng: &mut R) -> Self {
        let state = mean + sd * rng.sample::<f64, _>(StandardNormal);
        Self { mean, sd, state }
    }

    fn step<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let innov = self.sd * (1.0 - PHI * PHI).sqrt();
        self.state = self.mean + PHI * (self.state - self.mean) + innov * rng.sample::<f64, _>(StandardNormal);
        self.state
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn ensemble<R: Rng>(
    station_id: u32,
    date: NaiveDate,
    variable: Variable,
    truth: f64,
    spread: f64,
    rng: &mut R,
) -> RawRecord {
    let center = truth + FORECAST_ERROR_SD * spread.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let members = (0..N_MEMBERS)
        .map(|_| round3(center + spread * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let control = round3(center + spread * rng.sample::<f64, _>(StandardNormal));
    RawRecord {
        station_id,
        date,
        variable,
        members,
        control,
    }
}

fn station(spec: &SyntheticSpec, station_id: u32) -> Result<(Vec<RawRecord>, Vec<Observation>, Vec<TruthRow>)> {
    let mut rng = stream(spec.seed, &[station_id as u64]);
    let offset_u = 1.5 * rng.sample::<f64, _>(StandardNormal);
    let offset_v = 1.5 * rng.sample::<f64, _>(StandardNormal);
    let mut wind_u = Ar1::new(offset_u, WIND_SD, &mut rng);
    let mut wind_v = Ar1::new(offset_v, WIND_SD, &mut rng);
    let mut log_spread = Ar1::new(0.0, spec.spread_variability, &mut rng);
    let mut temp = Ar1::new(0.0, 3.0, &mut rng);
    let mut pres = Ar1::new(1013.0, 8.0, &mut rng);
    let mut sh = Ar1::new(6.0, 1.5, &mut rng);
    let mut speed = Ar1::new(1.5, 0.4, &mut rng);
    let mut regime = rng.random_range(0..3usize);

    let coef = EmosCoefficients::new(EmosVariant::Biv, spec.coefficients.clone())?;
    let clayton_x = PairCopula::new(Family::Clayton, Rotation::R0, vec![spec.clayton_theta_covariate])?;
    let clayton_top = PairCopula::new(Family::Clayton, Rotation::R0, vec![spec.clayton_theta_top])?;
    // Stationary spread of an ensemble mean around the latent offset.
    let mean_sd = (WIND_SD * WIND_SD + FORECAST_ERROR_SD * FORECAST_ERROR_SD).sqrt();

    let mut records = Vec::with_capacity(spec.days as usize * 5);
    let mut obs = Vec::with_capacity(spec.days as usize);
    let mut truth = Vec::with_capacity(spec.days as usize);
    for day in 0..spec.days {
        let date = spec.start_date + Days::new(day as u64);
        let (lu, lv) = match spec.generator {
            Generator::ThreeModeDirection => {
                if rng.random::<f64>() < 0.15 {
                    regime = rng.random_range(0..3usize);
                }
                let dir = [45f64, 200.0, 300.0][regime].to_radians() + 0.3 * rng.sample::<f64, _>(StandardNormal);
                let s = speed.step(&mut rng).exp();
                (s * dir.cos(), s * dir.sin())
            }
            _ => (wind_u.step(&mut rng), wind_v.step(&mut rng)),
        };
        let spread = log_spread.step(&mut rng).exp();
        let t = temp.step(&mut rng) + 10.0 + 8.0 * (2.0 * std::f64::consts::PI * day as f64 / 365.25).sin();
        let day_records = vec![
            ensemble(station_id, date, Variable::U, lu, spread, &mut rng),
            ensemble(station_id, date, Variable::V, lv, spread, &mut rng),
            ensemble(station_id, date, Variable::Temp, t, 0.8 * spread, &mut rng),
            ensemble(station_id, date, Variable::Pres, pres.step(&mut rng), 1.5 * spread, &mut rng),
            ensemble(station_id, date, Variable::Sh, sh.step(&mut rng), 0.3 * spread, &mut rng),
        ];
        let refs: Vec<&RawRecord> = day_records.iter().collect();
        let cov = build_covariates(&refs, CovariateSet::C)?;
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let (y, p) = match spec.generator {
            Generator::GaussianLinear => {
                let p = emos_predict(&coef, &cov)?;
                let y = gaussian_draw(p.mu_u, p.mu_v, p.sigma_u, p.sigma_v, p.rho, spec.noise_scale, e1, e2);
                (y, [p.mu_u, p.mu_v, p.sigma_u, p.sigma_v, p.rho])
            }
            Generator::ThreeModeDirection => {
                let rho = [0.6, -0.5, 0.1][regime];
                let s = (0.4 + 0.5 * cov.get("sd_u")?).exp();
                let (mu_u, mu_v) = (0.9 * cov.get("mean_u")?, 0.9 * cov.get("mean_v")? + 0.2);
                let y = gaussian_draw(mu_u, mu_v, s, s, rho, spec.noise_scale, e1, e2);
                (y, [mu_u, mu_v, s, s, rho])
            }
            Generator::ClaytonDependence => {
                let xu = norm_cdf((cov.get("mean_u")? - offset_u) / mean_sd);
                let xv = norm_cdf((cov.get("mean_v")? - offset_v) / mean_sd);
                // (w1, w2) ~ top copula; each response PIT then follows the
                // covariate copula given its ensemble-mean PIT.
                let w1 = norm_cdf(spec.noise_scale * e1).clamp(1e-12, 1.0 - 1e-12);
                let w2 = clayton_top.hinv1(norm_cdf(spec.noise_scale * e2), w1);
                let vu = clayton_x.hinv1(w1, xu);
                let vv = clayton_x.hinv1(w2, xv);
                let y = [
                    offset_u + mean_sd * norm_quantile(vu),
                    offset_v + mean_sd * norm_quantile(vv),
                ];
                (y, [offset_u, offset_v, mean_sd, mean_sd, xu])
            }
        };
        records.extend(day_records);
        obs.push(Observation {
            station_id,
            date,
            obs_u: y[0],
            obs_v: y[1],
        });
        truth.push(TruthRow { station_id, date, p });
    }
    Ok((records, obs, truth))
}

#[allow(clippy::too_many_arguments)]
fn gaussian_draw(mu_u: f64, mu_v: f64, su: f64, sv: f64, rho: f64, scale: f64, e1: f64, e2: f64) -> [f64; 2] {
    [
        mu_u + scale * su * e1,
        mu_v + scale * sv * (rho * e1 + (1.0 - rho * rho).sqrt() * e2),
    ]
}

/// Deterministic in `spec`; stations are generated in parallel from
/// independent streams.
pub fn simulate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let parts: Vec<_> = (1..=spec.stations)
        .into_par_iter()
        .map(|s| station(spec, s))
        .collect::<Result<Vec<_>>>()?;
    let mut out = SyntheticData {
        records: Vec::new(),
        observations: Vec::new(),
        truth: Vec::new(),
    };
    for (r, o, t) in parts {
        out.records.extend(r);
        out.observations.extend(o);
        out.truth.extend(t);
    }
    Ok(out)
}

pub fn write_truth(path: &Path, generator: Generator, truth: &[TruthRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["station_id", "date", "generator", "p1", "p2", "p3", "p4", "p5"])?;
    for t in truth {
        let mut row = vec![t.station_id.to_string(), t.date.to_string(), generator.to_string()];
        row.extend(t.p.iter().map(|x| fmt_num(*x)));
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Truth rows keyed by (station, date).
pub fn truth_index(truth: &[TruthRow]) -> BTreeMap<(u32, NaiveDate), [f64; 5]> {
    truth.iter().map(|t| ((t.station_id, t.date), t.p)).collect()
}

//! Batch pipeline behind the command-line front end.
//!
//! Artifacts live under the run's output directory:
//!
//! ```text
//! derived/covariates_<set>.csv
//! models/<tag>/station_<id>.json     per-station models
//! models/biv-drn/pooled.json         the pooled network ensemble
//! timing.csv                         fit wall time per model
//! predictions/<tag>.csv
//! scores/<tag>.csv
//! report/{aggregate,skill,pit_histogram,dm,selection,families}.csv
//! ```
//!
//! Every file except `timing.csv` is a deterministic function of the config.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::boost::{boost_fit, BoostConfig, BoostModel};
use crate::copula::{Family, FamilyMenu};
use crate::dataio::{
    assemble, fmt_num, read_forecasts, read_observations, write_covariates, CovariateSet, DatasetSplit, StationDay,
};
use crate::drn::{drn_train, DrnConfig, DrnModel, DrnSample};
use crate::emos::{emos_fit, emos_predict, EmosDesign, EmosFit, EmosVariant};
use crate::error::{Error, Result};
use crate::gaussian::BivNormalParams;
use crate::rng::{derive_seed, label_hash, stream};
use crate::verify::{
    aggregate, benjamini_hochberg, determinant_sharpness, dm_test, energy_evaluation, log_score, pit_histogram,
    skill_score, variogram_score, LogsExclusion, ScoreRow, PIT_BINS,
};
use crate::yvine::{yvine_fit, YVineConfig, YVineModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    #[serde(rename = "ind-emos")]
    IndEmos,
    #[serde(rename = "biv-emos")]
    BivEmos,
    #[serde(rename = "biv-emos-gb")]
    BivEmosGb,
    #[serde(rename = "biv-drn")]
    BivDrn,
    #[serde(rename = "yv-g")]
    YvG,
    #[serde(rename = "yv-p")]
    YvP,
    #[serde(rename = "yv-all")]
    YvAll,
}

impl ModelTag {
    pub const ALL: [ModelTag; 7] = [
        ModelTag::IndEmos,
        ModelTag::BivEmos,
        ModelTag::BivEmosGb,
        ModelTag::BivDrn,
        ModelTag::YvG,
        ModelTag::YvP,
        ModelTag::YvAll,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelTag::IndEmos => "ind-emos",
            ModelTag::BivEmos => "biv-emos",
            ModelTag::BivEmosGb => "biv-emos-gb",
            ModelTag::BivDrn => "biv-drn",
            ModelTag::YvG => "yv-g",
            ModelTag::YvP => "yv-p",
            ModelTag::YvAll => "yv-all",
        }
    }

    pub fn menu(self) -> Option<FamilyMenu> {
        match self {
            ModelTag::YvG => Some(FamilyMenu::G),
            ModelTag::YvP => Some(FamilyMenu::P),
            ModelTag::YvAll => Some(FamilyMenu::All),
            _ => None,
        }
    }

    /// Whether forecasts are closed-form bivariate normals.
    pub fn is_gaussian(self) -> bool {
        self.menu().is_none()
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelTag::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown model tag '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YVineSettings {
    pub max_k: usize,
    pub bandwidth_scale: f64,
}

impl Default for YVineSettings {
    fn default() -> Self {
        let d = YVineConfig::default();
        Self {
            max_k: d.max_k,
            bandwidth_scale: d.bandwidth_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub forecasts: PathBuf,
    pub observations: PathBuf,
    pub output_dir: PathBuf,
    pub models: Vec<ModelTag>,
    /// Covariate set of the boosting, network and vine models; the EMOS
    /// models always use their fixed predictors from C.
    pub covariates: CovariateSet,
    /// Number of leading distinct dates used for training.
    pub train_days: usize,
    /// Last training date; overrides `train_days` when set.
    pub train_end: Option<NaiveDate>,
    pub seed: u64,
    /// Draws per forecast sample set.
    pub score_samples: usize,
    pub reference: ModelTag,
    pub alpha: f64,
    pub logs_exclusion: LogsExclusion,
    pub jobs: Option<usize>,
    pub boost: BoostConfig,
    pub drn: DrnConfig,
    pub yvine: YVineSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            forecasts: "forecasts.csv".into(),
            observations: "observations.csv".into(),
            output_dir: "run".into(),
            models: ModelTag::ALL.to_vec(),
            covariates: CovariateSet::CPlus,
            train_days: 880,
            train_end: None,
            seed: 1,
            score_samples: 1000,
            reference: ModelTag::BivEmos,
            alpha: 0.05,
            logs_exclusion: LogsExclusion::PerCase,
            jobs: None,
            boost: BoostConfig::default(),
            drn: DrnConfig::default(),
            yvine: YVineSettings::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.forecasts, &mut cfg.observations, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models requested".into()));
        }
        if self.models.iter().collect::<BTreeSet<_>>().len() != self.models.len() {
            return Err(Error::Config("duplicate model tag".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.score_samples < 2 {
            return Err(Error::Config("score_samples must be at least 2".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.boost.validate()?;
        self.drn.validate()?;
        self.yvine_config(FamilyMenu::P).validate()
    }

    /// Fails unless both input files exist.
    pub fn check_inputs(&self) -> Result<()> {
        for p in [&self.forecasts, &self.observations] {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn yvine_config(&self, menu: FamilyMenu) -> YVineConfig {
        YVineConfig {
            menu,
            max_k: self.yvine.max_k,
            bandwidth_scale: self.yvine.bandwidth_scale,
        }
    }

    /// Runs `f` on a thread pool bounded by `jobs`.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.jobs {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }

    fn dir(&self, sub: &str) -> PathBuf {
        self.output_dir.join(sub)
    }
}

/// Assembled station-days with the chronological split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub days: Vec<StationDay>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.check_inputs()?;
        let records = read_forecasts(&cfg.forecasts)?;
        let obs = read_observations(&cfg.observations)?;
        Self::new(assemble(&records, &obs)?, cfg)
    }

    pub fn new(days: Vec<StationDay>, cfg: &RunConfig) -> Result<Self> {
        let dates: Vec<NaiveDate> = days.iter().map(|d| d.date).collect();
        let train_days = match cfg.train_end {
            Some(end) => dates.iter().filter(|&&d| d <= end).collect::<BTreeSet<_>>().len(),
            None => cfg.train_days,
        };
        let split = DatasetSplit::chronological(&dates, train_days, cfg.drn.validation_fraction)?;
        Ok(Self { days, split })
    }

    pub fn stations(&self) -> Vec<u32> {
        self.days.iter().map(|d| d.station_id).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn train(&self, station: u32) -> Vec<&StationDay> {
        self.days
            .iter()
            .filter(|d| d.station_id == station && self.split.is_train(d.date))
            .collect()
    }

    pub fn test(&self) -> Vec<&StationDay> {
        self.days.iter().filter(|d| self.split.is_test(d.date)).collect()
    }
}

fn covariates(d: &StationDay, set: CovariateSet) -> &[f64] {
    match set {
        CovariateSet::C => &d.cov_c.values,
        CovariateSet::CPlus => &d.cov_cplus.values,
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Writes both covariate sets with observations attached.
pub fn derive(cfg: &RunConfig, set: Option<CovariateSet>) -> Result<Vec<PathBuf>> {
    let data = Dataset::load(cfg)?;
    let dir = cfg.dir("derived");
    create_dir(&dir)?;
    let sets = match set {
        Some(s) => vec![s],
        None => vec![CovariateSet::C, CovariateSet::CPlus],
    };
    let mut out = Vec::new();
    for s in sets {
        let p = dir.join(format!("covariates_{}.csv", s.tag()));
        write_covariates(&p, &data.days, s)?;
        out.push(p);
    }
    Ok(out)
}

/// Serialized per-station model with its training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationArtifact<T> {
    pub model: ModelTag,
    pub station: u32,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub n_train: usize,
    pub fit: T,
}

fn station_path(cfg: &RunConfig, model: ModelTag, station: u32) -> PathBuf {
    cfg.dir("models").join(model.tag()).join(format!("station_{station}.json"))
}

fn pooled_path(cfg: &RunConfig) -> PathBuf {
    cfg.dir("models").join(ModelTag::BivDrn.tag()).join("pooled.json")
}

/// A loaded model for one station (or the pooled network).
#[derive(Debug, Clone)]
pub enum Fitted {
    Emos(EmosFit),
    Boost(BoostModel),
    Drn(std::sync::Arc<DrnModel>),
    YVine(YVineModel),
}

/// Predictive distribution of one case.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecast {
    Gaussian(BivNormalParams),
    /// Y-vine forecast, described by the model and its covariate vector.
    Vine(Vec<f64>),
}

impl Fitted {
    pub fn forecast(&self, day: &StationDay, set: CovariateSet) -> Result<Forecast> {
        Ok(match self {
            Fitted::Emos(f) => Forecast::Gaussian(emos_predict(&f.coefficients, &day.cov_c)?),
            Fitted::Boost(m) => Forecast::Gaussian(m.predict(covariates(day, set))?),
            Fitted::Drn(m) => Forecast::Gaussian(m.predict(day.station_id, covariates(day, set))?),
            Fitted::YVine(_) => Forecast::Vine(covariates(day, set).to_vec()),
        })
    }
}

fn fit_station(cfg: &RunConfig, model: ModelTag, station: u32, train: &[&StationDay]) -> Result<String> {
    let set = cfg.covariates;
    let y: Vec<[f64; 2]> = train.iter().map(|d| d.obs).collect();
    let wrap = |fit: serde_json::Value| StationArtifact {
        model,
        station,
        train_start: train[0].date,
        train_end: train[train.len() - 1].date,
        n_train: train.len(),
        fit,
    };
    let fit = match model {
        ModelTag::IndEmos | ModelTag::BivEmos => {
            let variant = if model == ModelTag::IndEmos {
                EmosVariant::Ind
            } else {
                EmosVariant::Biv
            };
            let design = train
                .iter()
                .map(|d| EmosDesign::from_covariates(&d.cov_c))
                .collect::<Result<Vec<_>>>()?;
            serde_json::to_value(emos_fit(&design, &y, variant)?)?
        }
        ModelTag::BivEmosGb => {
            let x: Vec<Vec<f64>> = train.iter().map(|d| covariates(d, set).to_vec()).collect();
            serde_json::to_value(boost_fit(set.names(), &x, &y, &cfg.boost)?)?
        }
        ModelTag::YvG | ModelTag::YvP | ModelTag::YvAll => {
            let x: Vec<Vec<f64>> = train.iter().map(|d| covariates(d, set).to_vec()).collect();
            let menu = model.menu().expect("vine tag");
            serde_json::to_value(yvine_fit(&y, &x, set.names(), &cfg.yvine_config(menu))?)?
        }
        ModelTag::BivDrn => unreachable!("the network is pooled"),
    };
    Ok(serde_json::to_string(&wrap(fit))?)
}

fn with_station(e: Error, model: ModelTag, station: u32) -> Error {
    match e {
        Error::FitFailure { message, last_iterate } => Error::FitFailure {
            message: format!("{model} station {station}: {message}"),
            last_iterate,
        },
        other => other,
    }
}

/// Fits every configured model and writes the artifacts. Returns the wall
/// time in seconds per model.
pub fn fit(cfg: &RunConfig, data: &Dataset) -> Result<Vec<(ModelTag, f64)>> {
    let stations = data.stations();
    let mut timing = Vec::new();
    for &model in &cfg.models {
        let dir = cfg.dir("models").join(model.tag());
        create_dir(&dir)?;
        let start = Instant::now();
        if model == ModelTag::BivDrn {
            let samples: Vec<DrnSample> = data
                .days
                .iter()
                .filter(|d| data.split.is_train(d.date))
                .map(|d| DrnSample {
                    station_id: d.station_id,
                    date: d.date,
                    covariates: covariates(d, cfg.covariates).to_vec(),
                    y: d.obs,
                })
                .collect();
            let seed = derive_seed(cfg.seed, &[label_hash(model.tag())]);
            let m = cfg.install(|| drn_train(&samples, &cfg.drn, seed))??;
            write_json(&pooled_path(cfg), &m)?;
        } else {
            let docs = cfg.install(|| {
                stations
                    .par_iter()
                    .map(|&s| {
                        let train = data.train(s);
                        if train.is_empty() {
                            return Err(Error::Schema(format!("station {s} has no training days")));
                        }
                        fit_station(cfg, model, s, &train).map_err(|e| with_station(e, model, s))
                    })
                    .collect::<Result<Vec<_>>>()
            })??;
            for (&s, doc) in stations.iter().zip(docs) {
                let p = station_path(cfg, model, s);
                fs::write(&p, doc).map_err(|e| Error::io(&p, e))?;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        log::info!("fitted {model} in {secs:.1} s");
        timing.push((model, secs));
    }
    write_timing(cfg, &timing)?;
    Ok(timing)
}

fn write_timing(cfg: &RunConfig, timing: &[(ModelTag, f64)]) -> Result<()> {
    let path = cfg.output_dir.join("timing.csv");
    let mut merged = read_timing(cfg)?;
    for (m, s) in timing {
        merged.insert(*m, *s);
    }
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["model", "fit_seconds"])?;
    for (m, s) in merged {
        w.write_record([m.tag().to_string(), format!("{s:.3}")])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Fit seconds per model from `timing.csv`; empty when absent.
pub fn read_timing(cfg: &RunConfig) -> Result<BTreeMap<ModelTag, f64>> {
    let path = cfg.output_dir.join("timing.csv");
    let mut out = BTreeMap::new();
    if !path.is_file() {
        return Ok(out);
    }
    let mut r = csv::Reader::from_path(&path)?;
    for rec in r.records() {
        let rec = rec?;
        if let (Ok(m), Ok(s)) = (rec[0].parse::<ModelTag>(), rec[1].parse::<f64>()) {
            out.insert(m, s);
        }
    }
    Ok(out)
}

/// Loaded models of one tag keyed by station.
pub fn load_models(cfg: &RunConfig, model: ModelTag, stations: &[u32]) -> Result<BTreeMap<u32, Fitted>> {
    let mut out = BTreeMap::new();
    if model == ModelTag::BivDrn {
        let m: std::sync::Arc<DrnModel> = std::sync::Arc::new(read_json(&pooled_path(cfg))?);
        for &s in stations {
            out.insert(s, Fitted::Drn(m.clone()));
        }
        return Ok(out);
    }
    for &s in stations {
        let p = station_path(cfg, model, s);
        let f = match model {
            ModelTag::IndEmos | ModelTag::BivEmos => Fitted::Emos(read_json::<StationArtifact<EmosFit>>(&p)?.fit),
            ModelTag::BivEmosGb => Fitted::Boost(read_json::<StationArtifact<BoostModel>>(&p)?.fit),
            _ => Fitted::YVine(read_json::<StationArtifact<YVineModel>>(&p)?.fit),
        };
        out.insert(s, f);
    }
    Ok(out)
}

fn predictions_path(cfg: &RunConfig, model: ModelTag) -> PathBuf {
    cfg.dir("predictions").join(format!("{}.csv", model.tag()))
}

fn scores_path(cfg: &RunConfig, model: ModelTag) -> PathBuf {
    cfg.dir("scores").join(format!("{}.csv", model.tag()))
}

const GAUSSIAN_COLUMNS: [&str; 5] = ["mu_u", "mu_v", "sigma_u", "sigma_v", "rho"];

/// One test case with its predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub station: u32,
    pub date: NaiveDate,
    pub obs: [f64; 2],
    pub forecast: Forecast,
}

/// Writes one descriptor row per test case and model: the five Gaussian
/// parameters, or the covariate vector that conditions a vine.
pub fn predict(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let dir = cfg.dir("predictions");
    create_dir(&dir)?;
    let test = data.test();
    let stations = data.stations();
    for &model in &cfg.models {
        let fitted = load_models(cfg, model, &stations)?;
        let cases = cfg.install(|| {
            test.par_iter()
                .map(|d| {
                    Ok(Case {
                        station: d.station_id,
                        date: d.date,
                        obs: d.obs,
                        forecast: fitted[&d.station_id].forecast(d, cfg.covariates)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let path = predictions_path(cfg, model);
        let mut w = csv::Writer::from_path(&path)?;
        let mut header: Vec<String> = ["station", "date", "obs_u", "obs_v"].iter().map(|s| s.to_string()).collect();
        if model.is_gaussian() {
            header.extend(GAUSSIAN_COLUMNS.iter().map(|s| s.to_string()));
        } else {
            header.extend(cfg.covariates.names().iter().map(|s| s.to_string()));
        }
        w.write_record(&header)?;
        for c in &cases {
            let mut row = vec![c.station.to_string(), c.date.to_string(), fmt_num(c.obs[0]), fmt_num(c.obs[1])];
            match &c.forecast {
                Forecast::Gaussian(p) => row.extend([p.mu_u, p.mu_v, p.sigma_u, p.sigma_v, p.rho].map(fmt_num)),
                Forecast::Vine(x) => row.extend(x.iter().map(|v| fmt_num(*v))),
            }
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn parse_num(s: &str, path: &Path) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Schema(format!("{}: cannot parse '{s}' as a number", path.display())))
}

fn parse_date(s: &str, path: &Path) -> Result<NaiveDate> {
    s.parse::<NaiveDate>()
        .map_err(|_| Error::Schema(format!("{}: cannot parse date '{s}'", path.display())))
}

fn parse_station(s: &str, path: &Path) -> Result<u32> {
    s.parse::<u32>()
        .map_err(|_| Error::Schema(format!("{}: cannot parse station '{s}'", path.display())))
}

/// Reads a predictions file back into cases.
pub fn read_predictions(cfg: &RunConfig, model: ModelTag) -> Result<Vec<Case>> {
    let path = predictions_path(cfg, model);
    require(&path)?;
    let mut r = csv::Reader::from_path(&path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let want: Vec<&str> = if model.is_gaussian() {
        GAUSSIAN_COLUMNS.to_vec()
    } else {
        cfg.covariates.names().to_vec()
    };
    if header.len() != 4 + want.len() || header[4..].iter().zip(&want).any(|(a, b)| a != b) {
        return Err(Error::Schema(format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let nums = (2..rec.len()).map(|i| parse_num(&rec[i], &path)).collect::<Result<Vec<_>>>()?;
        let forecast = if model.is_gaussian() {
            Forecast::Gaussian(BivNormalParams::new(nums[2], nums[3], nums[4], nums[5], nums[6])?)
        } else {
            Forecast::Vine(nums[2..].to_vec())
        };
        out.push(Case {
            station: parse_station(&rec[0], &path)?,
            date: parse_date(&rec[1], &path)?,
            obs: [nums[0], nums[1]],
            forecast,
        });
    }
    Ok(out)
}

/// Scores one case from two independent forecast samples drawn with seeds
/// derived from (model, station, day).
pub fn score_case(model: ModelTag, fitted: Option<&Fitted>, case: &Case, n: usize, seed: u64) -> Result<ScoreRow> {
    let path = [
        label_hash(model.tag()),
        case.station.into(),
        case.date.num_days_from_ce() as u64,
    ];
    let seeds = [0u64, 1].map(|k| derive_seed(seed, &[path[0], path[1], path[2], k]));
    let (r, r_star, ld) = match (&case.forecast, fitted) {
        (Forecast::Gaussian(p), _) => (
            p.sample(n, &mut stream(seeds[0], &[]))?,
            p.sample(n, &mut stream(seeds[1], &[]))?,
            p.logpdf(case.obs)?,
        ),
        (Forecast::Vine(x), Some(Fitted::YVine(m))) => (
            m.sample(x, n, seeds[0])?,
            m.sample(x, n, seeds[1])?,
            m.logdensity(case.obs, x)?,
        ),
        _ => return Err(Error::invalid(format!("{model}: a vine forecast needs its fitted model"))),
    };
    let e = energy_evaluation(&r, &r_star, case.obs)?;
    Ok(ScoreRow {
        model: model.tag().to_string(),
        station: case.station,
        date: case.date,
        es: e.es,
        vs: variogram_score(&r, case.obs)?,
        logs: log_score(ld),
        ds: determinant_sharpness(&r_star)?,
        pit: e.pit,
    })
}

const SCORE_HEADER: [&str; 8] = ["model", "station", "date", "es", "vs", "logs", "ds", "pit"];

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SCORE_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.station.to_string(),
            r.date.to_string(),
            fmt_num(r.es),
            fmt_num(r.vs),
            r.logs.map(fmt_num).unwrap_or_default(),
            fmt_num(r.ds),
            fmt_num(r.pit),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a score table; an empty `logs` field is a dropped log score.
pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(SCORE_HEADER) {
        return Err(Error::Schema(format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(ScoreRow {
            model: rec[0].to_string(),
            station: parse_station(&rec[1], path)?,
            date: parse_date(&rec[2], path)?,
            es: parse_num(&rec[3], path)?,
            vs: parse_num(&rec[4], path)?,
            logs: if rec[5].is_empty() {
                None
            } else {
                Some(parse_num(&rec[5], path)?)
            },
            ds: parse_num(&rec[6], path)?,
            pit: parse_num(&rec[7], path)?,
        });
    }
    Ok(out)
}

/// Scores every prediction file; returns the rows of all models.
pub fn evaluate(cfg: &RunConfig) -> Result<Vec<ScoreRow>> {
    let dir = cfg.dir("scores");
    create_dir(&dir)?;
    let mut all = Vec::new();
    for &model in &cfg.models {
        let cases = read_predictions(cfg, model)?;
        let stations: Vec<u32> = cases.iter().map(|c| c.station).collect::<BTreeSet<_>>().into_iter().collect();
        let fitted = if model.is_gaussian() {
            BTreeMap::new()
        } else {
            load_models(cfg, model, &stations)?
        };
        let rows = cfg.install(|| {
            cases
                .par_iter()
                .map(|c| score_case(model, fitted.get(&c.station), c, cfg.score_samples, cfg.seed))
                .collect::<Result<Vec<_>>>()
        })??;
        write_scores(&scores_path(cfg, model), &rows)?;
        all.extend(rows);
    }
    Ok(all)
}

/// Per-station DM tests of `row` against `col` on one score; returns the
/// share of stations where `row` is significantly better after BH.
pub fn dm_share(
    rows: &BTreeMap<u32, Vec<&ScoreRow>>,
    cols: &BTreeMap<u32, Vec<&ScoreRow>>,
    score: fn(&ScoreRow) -> Option<f64>,
    alpha: f64,
) -> Result<f64> {
    let mut p = Vec::new();
    let mut better = Vec::new();
    for (st, a) in rows {
        let Some(b) = cols.get(st) else { continue };
        let by_date: BTreeMap<NaiveDate, f64> = b.iter().filter_map(|r| Some((r.date, score(r)?))).collect();
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for r in a {
            if let (Some(va), Some(&vb)) = (score(r), by_date.get(&r.date)) {
                xa.push(va);
                xb.push(vb);
            }
        }
        // Short or identical series count as not significant.
        match dm_test(&xa, &xb) {
            Ok(t) => {
                p.push(t.p_value);
                better.push(t.statistic < 0.0);
            }
            Err(_) => {
                p.push(1.0);
                better.push(false);
            }
        }
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let reject = benjamini_hochberg(&p, alpha)?;
    let hits = reject.iter().zip(&better).filter(|(r, b)| **r && **b).count();
    Ok(hits as f64 / p.len() as f64)
}

fn group<'a>(rows: &'a [ScoreRow], model: &str) -> BTreeMap<u32, Vec<&'a ScoreRow>> {
    let mut out: BTreeMap<u32, Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.model == model) {
        out.entry(r.station).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.date);
    }
    out
}

/// Counts of how often each covariate is selected, over stations.
pub fn selection_counts(model: &Fitted, names: &[&str]) -> Vec<bool> {
    match model {
        Fitted::Boost(m) => m.selected(),
        Fitted::YVine(m) => {
            let mut s = vec![false; names.len()];
            for &j in &m.selected {
                s[j] = true;
            }
            s
        }
        _ => vec![false; names.len()],
    }
}

/// Family of every pair copula in a fitted vine: branches, covariate chain
/// and top copula.
pub fn vine_families(m: &YVineModel) -> Vec<Family> {
    m.branch_u
        .iter()
        .chain(&m.branch_v)
        .chain(m.chain.iter().flatten())
        .chain(std::iter::once(&m.top))
        .map(|c| c.family)
        .collect()
}

/// Summary tables of one run, as written by `report`.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ScoreRow>,
    pub summaries: BTreeMap<String, crate::verify::ModelSummary>,
    /// (score, row model, column model) → share of stations where the row
    /// model is significantly better.
    pub dm: BTreeMap<(String, ModelTag, ModelTag), f64>,
}

/// Reads the score tables and writes the report CSVs.
pub fn report(cfg: &RunConfig) -> Result<Report> {
    if !cfg.models.contains(&cfg.reference) {
        return Err(Error::Config(format!("reference model {} is not among the models", cfg.reference)));
    }
    let dir = cfg.dir("report");
    create_dir(&dir)?;
    let mut rows = Vec::new();
    for &m in &cfg.models {
        rows.extend(read_scores(&scores_path(cfg, m))?);
    }
    let summaries = aggregate(&rows, cfg.logs_exclusion);
    let summary = |m: ModelTag| {
        summaries
            .get(m.tag())
            .ok_or_else(|| Error::Schema(format!("no scores for model {m}")))
    };

    let path = dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["model", "es", "vs", "logs", "logs_dropped", "ds", "ri", "stations", "days"])?;
    for &m in &cfg.models {
        let s = summary(m)?;
        w.write_record([
            m.tag().to_string(),
            fmt_num(s.overall.es),
            fmt_num(s.overall.vs),
            fmt_num(s.overall.logs),
            s.logs_dropped.to_string(),
            fmt_num(s.overall.ds),
            fmt_num(s.ri),
            s.stations.to_string(),
            s.days.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let reference = summary(cfg.reference)?;
    let path = dir.join("skill.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["model", "reference", "station", "es_skill", "vs_skill"])?;
    for &m in &cfg.models {
        for (st, ms) in &summary(m)?.per_station {
            let r = reference
                .per_station
                .get(st)
                .ok_or_else(|| Error::Schema(format!("reference has no scores at station {st}")))?;
            w.write_record([
                m.tag().to_string(),
                cfg.reference.tag().to_string(),
                st.to_string(),
                fmt_num(skill_score(ms.es, r.es)?),
                fmt_num(skill_score(ms.vs, r.vs)?),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("pit_histogram.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["model", "bin_lo", "bin_hi", "freq"])?;
    for &m in &cfg.models {
        let pits: Vec<f64> = rows.iter().filter(|r| r.model == m.tag()).map(|r| r.pit).collect();
        for (b, f) in pit_histogram(&pits).into_iter().enumerate() {
            w.write_record([
                m.tag().to_string(),
                fmt_num(b as f64 / PIT_BINS as f64),
                fmt_num((b + 1) as f64 / PIT_BINS as f64),
                fmt_num(f),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let grouped: BTreeMap<ModelTag, _> = cfg.models.iter().map(|&m| (m, group(&rows, m.tag()))).collect();
    let scores: [(&str, fn(&ScoreRow) -> Option<f64>); 2] = [("es", |r| Some(r.es)), ("logs", |r| r.logs)];
    let mut dm = BTreeMap::new();
    let path = dir.join("dm.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["score", "row_model", "col_model", "pct_stations_significant"])?;
    for (name, f) in scores {
        for &a in &cfg.models {
            for &b in &cfg.models {
                let share = if a == b {
                    0.0
                } else {
                    dm_share(&grouped[&a], &grouped[&b], f, cfg.alpha)?
                };
                w.write_record([name.to_string(), a.tag().into(), b.tag().into(), fmt_num(100.0 * share)])?;
                dm.insert((name.to_string(), a, b), share);
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let stations: Vec<u32> = reference.per_station.keys().copied().collect();
    let names = cfg.covariates.names();
    let path = dir.join("selection.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["model", "covariate", "count", "stations"])?;
    let mut fam = csv::Writer::from_path(dir.join("families.csv"))?;
    fam.write_record(["model", "family", "count", "proportion"])?;
    for &m in cfg.models.iter().filter(|m| **m == ModelTag::BivEmosGb || !m.is_gaussian()) {
        let fitted = load_models(cfg, m, &stations)?;
        let mut counts = vec![0usize; names.len()];
        let mut families: BTreeMap<&'static str, usize> = BTreeMap::new();
        for f in fitted.values() {
            for (c, s) in counts.iter_mut().zip(selection_counts(f, names)) {
                *c += usize::from(s);
            }
            if let Fitted::YVine(v) = f {
                for fm in vine_families(v) {
                    *families.entry(fm.as_str()).or_default() += 1;
                }
            }
        }
        for (n, c) in names.iter().zip(&counts) {
            w.write_record([m.tag(), n, &c.to_string(), &fitted.len().to_string()])?;
        }
        let total: usize = families.values().sum();
        for (f, c) in &families {
            fam.write_record([
                m.tag().to_string(),
                f.to_string(),
                c.to_string(),
                fmt_num(*c as f64 / total as f64),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    fam.flush().map_err(|e| Error::io(dir.join("families.csv"), e))?;

    Ok(Report { rows, summaries, dm })
}

/// Table of mean scores with fit wall time, for the terminal.
pub fn format_table(cfg: &RunConfig, report: &Report) -> Result<String> {
    let timing = read_timing(cfg)?;
    let mut s = format!(
        "{:<12} {:>9} {:>9} {:>9} {:>9} {:>7} {:>9}\n",
        "model", "ES", "VS", "LogS", "DS", "RI", "T(min)"
    );
    for &m in &cfg.models {
        let Some(x) = report.summaries.get(m.tag()) else { continue };
        let t = timing.get(&m).map(|t| format!("{:.2}", t / 60.0)).unwrap_or_else(|| "-".into());
        s += &format!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>7.4} {:>9}\n",
            m.tag(),
            x.overall.es,
            x.overall.vs,
            x.overall.logs,
            x.overall.ds,
            x.ri,
            t
        );
    }
    Ok(s)
}

/// fit, predict, evaluate and report in sequence.
pub fn run_all(cfg: &RunConfig) -> Result<Report> {
    let data = Dataset::load(cfg)?;
    fit(cfg, &data)?;
    predict(cfg, &data)?;
    evaluate(cfg)?;
    report(cfg)
}

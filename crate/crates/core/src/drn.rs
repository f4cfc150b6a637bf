//! BIV-DRN: a single network for all stations. Input is a learned station
//! embedding concatenated with the standardized covariates; one ReLU hidden
//! layer feeds the five Gaussian predictors. Ten independently initialised
//! members are trained with Adam and their distribution parameters averaged.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::StandardizationStats;
use crate::error::{Error, Result};
use crate::gaussian::{link_to_params, nll_and_gradient, BivNormalParams, PredictorVector};
use crate::rng::{derive_seed, stream};

pub const ENSEMBLE_SIZE: usize = 10;
pub const EMBEDDING_INIT: f64 = 0.05;
pub const MAX_RESTARTS: usize = 3;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrnConfig {
    pub n_emb: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the latest training dates held out for early stopping.
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for DrnConfig {
    fn default() -> Self {
        Self {
            n_emb: 5,
            hidden: 64,
            epochs: 100,
            batch_size: 1024,
            learning_rate: 5e-4,
            validation_fraction: 0.2,
            patience: 10,
        }
    }
}

impl DrnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_emb == 0 {
            return Err(Error::Config("network embedding dimension must be at least 1".into()));
        }
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("network hidden size, epochs, batch size and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("network learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("network validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Weights of one network, stored flat as
/// `[E (stations x n_emb) | A1 (hidden x d) | b1 | A2 (5 x hidden) | b2]`
/// with `d = n_emb + n_cov`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrnNetwork {
    pub n_stations: usize,
    pub n_emb: usize,
    pub n_cov: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    a1: usize,
    b1: usize,
    a2: usize,
    b2: usize,
    len: usize,
}

/// Per-sample activations reused across forward and backward passes.
struct Scratch {
    w: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    dpre: Vec<f64>,
}

impl DrnNetwork {
    fn layout_for(n_stations: usize, n_emb: usize, n_cov: usize, hidden: usize) -> Layout {
        let d = n_emb + n_cov;
        let a1 = n_stations * n_emb;
        let b1 = a1 + hidden * d;
        let a2 = b1 + hidden;
        let b2 = a2 + 5 * hidden;
        Layout {
            a1,
            b1,
            a2,
            b2,
            len: b2 + 5,
        }
    }

    fn layout(&self) -> Layout {
        Self::layout_for(self.n_stations, self.n_emb, self.n_cov, self.hidden)
    }

    pub fn input_dim(&self) -> usize {
        self.n_emb + self.n_cov
    }

    pub fn zeros(n_stations: usize, n_emb: usize, n_cov: usize, hidden: usize) -> Self {
        let len = Self::layout_for(n_stations, n_emb, n_cov, hidden).len;
        Self {
            n_stations,
            n_emb,
            n_cov,
            hidden,
            params: vec![0.0; len],
        }
    }

    /// Embeddings uniform on `[-0.05, 0.05]`, weight matrices Glorot
    /// uniform, biases zero.
    pub fn init<R: Rng + ?Sized>(n_stations: usize, n_emb: usize, n_cov: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(n_stations, n_emb, n_cov, hidden);
        let l = net.layout();
        let d = n_emb + n_cov;
        for p in &mut net.params[..l.a1] {
            *p = rng.random_range(-EMBEDDING_INIT..=EMBEDDING_INIT);
        }
        let r1 = (6.0 / (d + hidden) as f64).sqrt();
        for p in &mut net.params[l.a1..l.b1] {
            *p = rng.random_range(-r1..=r1);
        }
        let r2 = (6.0 / (hidden + 5) as f64).sqrt();
        for p in &mut net.params[l.a2..l.b2] {
            *p = rng.random_range(-r2..=r2);
        }
        net
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            w: vec![0.0; self.input_dim()],
            pre: vec![0.0; self.hidden],
            act: vec![0.0; self.hidden],
            dpre: vec![0.0; self.hidden],
        }
    }

    fn forward_into(&self, station: usize, x: &[f64], s: &mut Scratch) -> [f64; 5] {
        let l = self.layout();
        let d = self.input_dim();
        let p = &self.params;
        s.w[..self.n_emb].copy_from_slice(&p[station * self.n_emb..(station + 1) * self.n_emb]);
        s.w[self.n_emb..].copy_from_slice(x);
        for i in 0..self.hidden {
            let row = &p[l.a1 + i * d..l.a1 + (i + 1) * d];
            let z = p[l.b1 + i] + row.iter().zip(&s.w).map(|(a, b)| a * b).sum::<f64>();
            s.pre[i] = z;
            s.act[i] = z.max(0.0);
        }
        let mut eta = [0.0; 5];
        for (k, e) in eta.iter_mut().enumerate() {
            let row = &p[l.a2 + k * self.hidden..l.a2 + (k + 1) * self.hidden];
            *e = p[l.b2 + k] + row.iter().zip(&s.act).map(|(a, b)| a * b).sum::<f64>();
        }
        eta
    }

    /// Predictors for a station row index and standardized covariates.
    pub fn forward(&self, station: usize, x: &[f64]) -> Result<PredictorVector> {
        if station >= self.n_stations {
            return Err(Error::UnknownStation(station as u32));
        }
        if x.len() != self.n_cov {
            return Err(Error::Schema(format!("network expects {} covariates, got {}", self.n_cov, x.len())));
        }
        Ok(PredictorVector::from_array(self.forward_into(station, x, &mut self.scratch())))
    }

    /// Adds the gradient of one sample's NLL (scaled by `weight`) to `grad`
    /// and returns the NLL.
    fn backward(&self, station: usize, x: &[f64], y: [f64; 2], weight: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
        let eta = self.forward_into(station, x, s);
        let (loss, g) = nll_and_gradient(&PredictorVector::from_array(eta), y);
        let l = self.layout();
        let d = self.input_dim();
        let p = &self.params;
        s.dpre.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..5 {
            let gk = weight * g[k];
            grad[l.b2 + k] += gk;
            let off = l.a2 + k * self.hidden;
            for i in 0..self.hidden {
                grad[off + i] += gk * s.act[i];
                s.dpre[i] += gk * p[off + i];
            }
        }
        let emb = station * self.n_emb;
        for i in 0..self.hidden {
            if s.pre[i] <= 0.0 {
                continue;
            }
            let gi = s.dpre[i];
            grad[l.b1 + i] += gi;
            let off = l.a1 + i * d;
            for (gw, w) in grad[off..off + d].iter_mut().zip(&s.w) {
                *gw += gi * w;
            }
            for j in 0..self.n_emb {
                grad[emb + j] += gi * p[off + j];
            }
        }
        loss
    }

    /// Mean NLL over `(station row, standardized covariates, standardized
    /// response)` cases and its gradient with respect to `params`.
    pub fn loss_gradient(&self, cases: &[(usize, &[f64], [f64; 2])]) -> Result<(f64, Vec<f64>)> {
        if cases.is_empty() {
            return Err(Error::invalid("gradient needs at least one case"));
        }
        for (st, x, _) in cases {
            if *st >= self.n_stations {
                return Err(Error::UnknownStation(*st as u32));
            }
            if x.len() != self.n_cov {
                return Err(Error::Schema(format!("network expects {} covariates, got {}", self.n_cov, x.len())));
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut s = self.scratch();
        let w = 1.0 / cases.len() as f64;
        let total: f64 = cases.iter().map(|(st, x, y)| self.backward(*st, x, *y, w, &mut grad, &mut s)).sum();
        Ok((total * w, grad))
    }

    /// Mean NLL over `batch` and its gradient (overwrites `grad`).
    fn loss_and_gradient(&self, data: &Prepared, batch: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let w = 1.0 / batch.len() as f64;
        let mut s = self.scratch();
        let mut total = 0.0;
        for &t in batch {
            total += self.backward(data.station[t], data.x(t), data.y[t], w, grad, &mut s);
        }
        total * w
    }

    fn mean_loss(&self, data: &Prepared, rows: &[usize]) -> f64 {
        let mut s = self.scratch();
        let total: f64 = rows
            .iter()
            .map(|&t| {
                let eta = self.forward_into(data.station[t], data.x(t), &mut s);
                nll_and_gradient(&PredictorVector::from_array(eta), data.y[t]).0
            })
            .sum();
        total / rows.len() as f64
    }
}

/// One pooled training case with raw covariates and observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DrnSample {
    pub station_id: u32,
    pub date: NaiveDate,
    pub covariates: Vec<f64>,
    pub y: [f64; 2],
}

/// Standardized cases in canonical (date, station) order.
struct Prepared {
    station: Vec<usize>,
    xs: Vec<f64>,
    p: usize,
    y: Vec<[f64; 2]>,
    date: Vec<NaiveDate>,
}

impl Prepared {
    fn x(&self, t: usize) -> &[f64] {
        &self.xs[t * self.p..(t + 1) * self.p]
    }

    fn len(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub seed: u64,
    pub restarts: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Mean training loss of the initialized network.
    pub initial_loss: f64,
    /// Mean training loss after the first epoch.
    pub first_epoch_loss: f64,
    /// Running mean of the mini-batch losses within each epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

/// Trained ensemble with the pooled standardization it was fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrnModel {
    pub config: DrnConfig,
    pub seed: u64,
    /// Station ids in embedding-row order.
    pub stations: Vec<u32>,
    pub covariate_stats: StandardizationStats,
    pub response_mean: [f64; 2],
    pub response_sd: [f64; 2],
    pub members: Vec<DrnNetwork>,
    pub reports: Vec<MemberReport>,
}

/// Adam state for a flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    rate: f64,
}

impl Adam {
    fn new(n: usize, rate: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            rate,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= self.rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

fn prepare(samples: &[DrnSample]) -> Result<(Vec<u32>, StandardizationStats, [f64; 2], [f64; 2], Prepared)> {
    let Some(first) = samples.first() else {
        return Err(Error::invalid("network training needs data"));
    };
    let p = first.covariates.len();
    if p == 0 {
        return Err(Error::invalid("network training needs at least one covariate"));
    }
    for s in samples {
        if s.covariates.len() != p {
            return Err(Error::Schema("covariate vectors differ in length".into()));
        }
        if s.covariates.iter().chain(&s.y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("network training data must be finite"));
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| (samples[i].date, samples[i].station_id));
    if order.windows(2).any(|w| {
        let (a, b) = (&samples[w[0]], &samples[w[1]]);
        a.date == b.date && a.station_id == b.station_id
    }) {
        return Err(Error::Schema("duplicate (station, date) in network training data".into()));
    }
    let stations: Vec<u32> = samples
        .iter()
        .map(|s| s.station_id)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<u32, usize> = stations.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let rows: Vec<&[f64]> = order.iter().map(|&i| samples[i].covariates.as_slice()).collect();
    let cstats = StandardizationStats::fit(&rows)?;
    let yrows: Vec<[f64; 2]> = order.iter().map(|&i| samples[i].y).collect();
    let yslices: Vec<&[f64]> = yrows.iter().map(|r| r.as_slice()).collect();
    let ystats = StandardizationStats::fit(&yslices)?;
    let (ym, ys) = ([ystats.mean[0], ystats.mean[1]], [ystats.sd[0], ystats.sd[1]]);
    let mut xs = Vec::with_capacity(order.len() * p);
    for r in &rows {
        xs.extend(cstats.standardize(r)?);
    }
    let prepared = Prepared {
        station: order.iter().map(|&i| index[&samples[i].station_id]).collect(),
        xs,
        p,
        y: yrows.iter().map(|r| [(r[0] - ym[0]) / ys[0], (r[1] - ym[1]) / ys[1]]).collect(),
        date: order.iter().map(|&i| samples[i].date).collect(),
    };
    Ok((stations, cstats, ym, ys, prepared))
}

/// Trains one member from `seed`. Returns `None` on divergence.
fn train_member(data: &Prepared, n_stations: usize, train: &[usize], val: &[usize], config: &DrnConfig, seed: u64) -> Option<(DrnNetwork, MemberReport)> {
    let mut rng = stream(seed, &[]);
    let mut net = DrnNetwork::init(n_stations, config.n_emb, data.p, config.hidden, &mut rng);
    let mut adam = Adam::new(net.params.len(), config.learning_rate);
    let mut grad = vec![0.0; net.params.len()];
    let mut order = train.to_vec();
    let mut report = MemberReport {
        seed,
        restarts: 0,
        epochs_run: 0,
        best_epoch: 0,
        initial_loss: net.mean_loss(data, train),
        first_epoch_loss: f64::NAN,
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
    };
    let mut best = (f64::INFINITY, net.params.clone());
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let loss = net.loss_and_gradient(data, batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return None;
            }
            adam.step(&mut net.params, &grad);
            epoch_loss += loss * batch.len() as f64;
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return None;
        }
        report.train_loss.push(epoch_loss / order.len() as f64);
        report.epochs_run = epoch;
        if epoch == 1 {
            report.first_epoch_loss = net.mean_loss(data, train);
        }
        if val.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let v = net.mean_loss(data, val);
        if !v.is_finite() {
            return None;
        }
        report.validation_loss.push(v);
        if v < best.0 {
            best = (v, net.params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if !val.is_empty() {
        net.params = best.1;
    }
    Some((net, report))
}

/// Trains the ten-member ensemble on pooled data. Covariates and responses
/// are standardized with pooled statistics; the latest
/// `validation_fraction` of dates drive early stopping.
pub fn drn_train(samples: &[DrnSample], config: &DrnConfig, seed: u64) -> Result<DrnModel> {
    config.validate()?;
    let (stations, covariate_stats, response_mean, response_sd, data) = prepare(samples)?;
    let dates: Vec<NaiveDate> = data.date.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let n_val = (dates.len() as f64 * config.validation_fraction).round() as usize;
    if n_val >= dates.len() {
        return Err(Error::invalid("network validation split leaves no training dates"));
    }
    let cut = dates[dates.len() - n_val..].first().copied();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for t in 0..data.len() {
        match cut {
            Some(c) if data.date[t] >= c => val.push(t),
            _ => train.push(t),
        }
    }
    let n_stations = stations.len();
    let fits: Vec<Result<(DrnNetwork, MemberReport)>> = (0..ENSEMBLE_SIZE)
        .into_par_iter()
        .map(|m| {
            for attempt in 0..=MAX_RESTARTS {
                let s = derive_seed(seed, &[m as u64, attempt as u64]);
                if let Some((net, mut rep)) = train_member(&data, n_stations, &train, &val, config, s) {
                    rep.restarts = attempt;
                    return Ok((net, rep));
                }
                log::warn!("network member {m} diverged (attempt {}), restarting", attempt + 1);
            }
            Err(Error::FitFailure {
                message: format!("network member {m} diverged after {MAX_RESTARTS} restarts"),
                last_iterate: None,
            })
        })
        .collect();
    let mut members = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut reports = Vec::with_capacity(ENSEMBLE_SIZE);
    for f in fits {
        let (n, r) = f?;
        members.push(n);
        reports.push(r);
    }
    Ok(DrnModel {
        config: *config,
        seed,
        stations,
        covariate_stats,
        response_mean,
        response_sd,
        members,
        reports,
    })
}

/// Arithmetic mean of distribution parameters.
pub fn average_params(params: &[BivNormalParams]) -> Result<BivNormalParams> {
    if params.is_empty() {
        return Err(Error::invalid("cannot average an empty ensemble"));
    }
    let n = params.len() as f64;
    let flat = |p: &BivNormalParams| [p.mu_u, p.mu_v, p.sigma_u, p.sigma_v, p.rho];
    // Offsets from the first member keep identical members exact.
    let base = flat(&params[0]);
    let mut dev = [0.0; 5];
    for p in params {
        for ((d, v), b) in dev.iter_mut().zip(flat(p)).zip(base) {
            *d += v - b;
        }
    }
    let a: Vec<f64> = base.iter().zip(dev).map(|(b, d)| b + d / n).collect();
    BivNormalParams::new(a[0], a[1], a[2], a[3], a[4])
}

impl DrnModel {
    pub fn station_index(&self, station_id: u32) -> Result<usize> {
        self.stations.binary_search(&station_id).map_err(|_| Error::UnknownStation(station_id))
    }

    /// Averaged member parameters on the standardized scale.
    pub fn predict_standardized(&self, station_id: u32, covariates: &[f64]) -> Result<BivNormalParams> {
        let s = self.station_index(station_id)?;
        let x = self.covariate_stats.standardize(covariates)?;
        let mut each = Vec::with_capacity(self.members.len());
        for m in &self.members {
            each.push(link_to_params(&m.forward(s, &x)?)?);
        }
        average_params(&each)
    }

    /// Predictive distribution on the observation scale.
    pub fn predict(&self, station_id: u32, covariates: &[f64]) -> Result<BivNormalParams> {
        Ok(self
            .predict_standardized(station_id, covariates)?
            .destandardize(self.response_mean, self.response_sd))
    }
}

/// Mean NLL of the averaged ensemble on raw-scale samples.
pub fn drn_mean_nll(model: &DrnModel, samples: &[DrnSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total -= model.predict(s.station_id, &s.covariates)?.logpdf(s.y)?;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn random_net(seed: u64, n_emb: usize, n_cov: usize, hidden: usize) -> DrnNetwork {
        let mut rng = stream(seed, &[]);
        let mut net = DrnNetwork::init(3, n_emb, n_cov, hidden, &mut rng);
        for p in &mut net.params {
            *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        net
    }

    fn prepared(seed: u64, n: usize, p: usize) -> Prepared {
        let mut rng = stream(seed, &[1]);
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        Prepared {
            station: (0..n).map(|t| t % 3).collect(),
            xs: (0..n * p).map(|_| rng.sample(StandardNormal)).collect(),
            p,
            y: (0..n).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect(),
            date: (0..n).map(|t| d0 + chrono::Days::new(t as u64)).collect(),
        }
    }

    #[test]
    fn zero_network_gives_standard_params() {
        let net = DrnNetwork::zeros(2, 3, 4, 5);
        let p = link_to_params(&net.forward(1, &[0.3, -1.0, 2.0, 0.5]).unwrap()).unwrap();
        assert_eq!(p, BivNormalParams::standard());
        assert!(matches!(net.forward(2, &[0.0; 4]), Err(Error::UnknownStation(2))));
    }

    #[test]
    fn relu_gate_leaves_bias() {
        let mut net = DrnNetwork::zeros(1, 1, 1, 2);
        let l = net.layout();
        // Hidden node 0 has pre-activation -x for x > 0.
        net.params[l.a1 + 1] = -1.0;
        net.params[l.a2 + 2 * 2] = 1.0;
        net.params[l.b2 + 2] = 0.25;
        let eta = net.forward(0, &[2.0]).unwrap();
        assert_eq!(eta.eta_sigma_u, 0.25);
        let eta = net.forward(0, &[-2.0]).unwrap();
        assert_eq!(eta.eta_sigma_u, 2.25);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for cfg in 0..20u64 {
            let n_emb = 1 + (cfg as usize % 3);
            let hidden = 2 + (cfg as usize % 5);
            let net = random_net(cfg, n_emb, 4, hidden);
            let data = prepared(cfg, 12, 4);
            let batch: Vec<usize> = (0..12).collect();
            let mut grad = vec![0.0; net.params.len()];
            net.loss_and_gradient(&data, &batch, &mut grad);
            let mut probe = net.clone();
            let mut scratch = vec![0.0; net.params.len()];
            let h = 1e-6;
            for i in 0..net.params.len() {
                probe.params[i] = net.params[i] + h;
                let up = probe.loss_and_gradient(&data, &batch, &mut scratch);
                probe.params[i] = net.params[i] - h;
                let down = probe.loss_and_gradient(&data, &batch, &mut scratch);
                probe.params[i] = net.params[i];
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-4);
                assert!(rel < 1e-4, "config {cfg} param {i}: analytic {} fd {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn averaging_identical_members_is_identity_and_rho_cancels() {
        let p = BivNormalParams::new(0.5, -1.0, 1.3, 0.7, 0.2).unwrap();
        assert_eq!(average_params(&[p; 10]).unwrap(), p);
        let a = BivNormalParams::new(0.0, 0.0, 1.0, 1.0, 0.4).unwrap();
        let b = BivNormalParams { rho: -0.4, ..a };
        let mut v = vec![a; 5];
        v.extend([b; 5]);
        assert!(average_params(&v).unwrap().rho.abs() < 1e-15);
    }

    #[test]
    fn destandardization_of_averaged_params() {
        let p = BivNormalParams::standard().destandardize([1.0, 1.0], [2.0, 2.0]);
        assert_eq!((p.mu_u, p.mu_v, p.sigma_u, p.sigma_v, p.rho), (1.0, 1.0, 2.0, 2.0, 0.0));
    }

    #[test]
    fn adam_first_step_moves_by_rate() {
        let mut adam = Adam::new(2, 0.01);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9 && (p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn first_epoch_lowers_training_loss() {
        let data = prepared(5, 600, 3);
        let mut data = data;
        // Make the response depend on the covariates.
        for t in 0..data.len() {
            let x = data.x(t).to_vec();
            data.y[t][0] += 1.5 * x[0];
            data.y[t][1] -= x[1];
        }
        let train: Vec<usize> = (0..data.len()).collect();
        let config = DrnConfig {
            epochs: 1,
            batch_size: 32,
            learning_rate: 5e-3,
            ..DrnConfig::default()
        };
        let mut rng = stream(11, &[]);
        let before = DrnNetwork::init(3, config.n_emb, 3, config.hidden, &mut rng).mean_loss(&data, &train);
        let (net, rep) = train_member(&data, 3, &train, &[], &config, 11).unwrap();
        assert!(net.mean_loss(&data, &train) < before);
        assert_eq!(rep.epochs_run, 1);
    }

    #[test]
    fn config_validation() {
        assert!(DrnConfig::default().validate().is_ok());
        assert!(DrnConfig { n_emb: 0, ..DrnConfig::default() }.validate().is_err());
        assert!(DrnConfig { validation_fraction: 1.0, ..DrnConfig::default() }.validate().is_err());
    }
}

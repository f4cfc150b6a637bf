//! BIV-EMOS-GB: non-cyclic componentwise gradient boosting of all five
//! predictors over standardized covariates, with blocked cross-validation
//! for the stopping iteration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{link_to_params, BivNormalParams, PredictorVector};
use crate::special::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub learning_rate: f64,
    pub max_iter: usize,
    pub folds: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iter: 2000,
            folds: 10,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("boosting learning rate must lie in (0, 1]".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("boosting needs at least one iteration".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("boosting needs at least two folds".into()));
        }
        Ok(())
    }
}

pub const N_PREDICTORS: usize = 5;

/// One boosting step: predictor `k` gains `delta` on column `j` (0 is the
/// intercept, `j > 0` covariate `j - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub predictor: usize,
    pub column: usize,
    pub delta: f64,
}

/// Per-row distribution state on the standardized scale.
#[derive(Debug, Clone)]
struct Rows {
    eta: Vec<[f64; 5]>,
    y: Vec<[f64; 2]>,
    nll: Vec<f64>,
}

#[inline]
fn row_nll(eta: &[f64; 5], y: [f64; 2]) -> f64 {
    let q = 1.0 + eta[4] * eta[4];
    let c = eta[4] * q.sqrt();
    let zu = (y[0] - eta[0]) * (-eta[2]).exp();
    let zv = (y[1] - eta[1]) * (-eta[3]).exp();
    LN_2PI + eta[2] + eta[3] - 0.5 * q.ln() + 0.5 * q * (zu * zu + zv * zv) - c * zu * zv
}

impl Rows {
    fn new(y: &[[f64; 2]]) -> Self {
        let eta = vec![[0.0; 5]; y.len()];
        let nll = eta.iter().zip(y).map(|(e, &yy)| row_nll(e, yy)).collect();
        Self { eta, y: y.to_vec(), nll }
    }

    fn total(&self) -> f64 {
        self.nll.iter().sum()
    }

    fn apply(&mut self, step: &Step, x: &[Vec<f64>]) {
        for (t, (e, n)) in self.eta.iter_mut().zip(self.nll.iter_mut()).enumerate() {
            let xv = if step.column == 0 { 1.0 } else { x[step.column - 1][t] };
            e[step.predictor] += step.delta * xv;
            *n = row_nll(e, self.y[t]);
        }
    }
}

/// Negative gradients of the row NLL with respect to the five predictors,
/// together with the quantities reused by the trial-update formulas.
struct Work {
    g: [Vec<f64>; 5],
    /// Half the second derivative of the row NLL in each predictor.
    h: [Vec<f64>; 5],
    /// Bound on a sixth of the third derivative (sigma rows omit the
    /// `exp(2|d|)` factor, applied per candidate).
    r: [Vec<f64>; 5],
    zu: Vec<f64>,
    zv: Vec<f64>,
    q: Vec<f64>,
    c: Vec<f64>,
    inv_su: Vec<f64>,
    inv_sv: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            g: [z(), z(), z(), z(), z()],
            h: [z(), z(), z(), z(), z()],
            r: [z(), z(), z(), z(), z()],
            zu: z(),
            zv: z(),
            q: z(),
            c: z(),
            inv_su: z(),
            inv_sv: z(),
        }
    }

    fn refresh(&mut self, rows: &Rows) {
        for (t, (e, y)) in rows.eta.iter().zip(&rows.y).enumerate() {
            let q = 1.0 + e[4] * e[4];
            let sq = q.sqrt();
            let c = e[4] * sq;
            let isu = (-e[2]).exp();
            let isv = (-e[3]).exp();
            let zu = (y[0] - e[0]) * isu;
            let zv = (y[1] - e[1]) * isv;
            self.zu[t] = zu;
            self.zv[t] = zv;
            self.q[t] = q;
            self.c[t] = c;
            self.inv_su[t] = isu;
            self.inv_sv[t] = isv;
            // d nll / d eta, negated.
            self.g[0][t] = (q * zu - c * zv) * isu;
            self.g[1][t] = (q * zv - c * zu) * isv;
            self.g[2][t] = -(1.0 - q * zu * zu + c * zu * zv);
            self.g[3][t] = -(1.0 - q * zv * zv + c * zu * zv);
            // d/d eta of [-0.5 ln q + 0.5 q (zu^2 + zv^2) - eta sqrt(q) zu zv].
            let dq = 2.0 * e[4];
            let dc = sq + e[4] * e[4] / sq;
            self.g[4][t] = -(-0.5 * dq / q + 0.5 * dq * (zu * zu + zv * zv) - dc * zu * zv);
            let p = zu * zv;
            let cp = (c * p).abs();
            self.h[0][t] = 0.5 * q * isu * isu;
            self.h[1][t] = 0.5 * q * isv * isv;
            self.h[2][t] = q * zu * zu - 0.5 * c * p;
            self.h[3][t] = q * zv * zv - 0.5 * c * p;
            self.r[2][t] = (4.0 * q * zu * zu + cp) / 6.0;
            self.r[3][t] = (4.0 * q * zv * zv + cp) / 6.0;
            // |d^3/de^3 of -0.5 ln(1 + e^2)| <= 1.4572 and of e sqrt(1 + e^2) <= 3.
            let e4 = e[4];
            let d2 = -(1.0 - e4 * e4) / (q * q) + (zu * zu + zv * zv) - e4 * (3.0 + 2.0 * e4 * e4) / (q * sq) * p;
            self.h[4][t] = 0.5 * d2;
            self.r[4][t] = (1.4572 + 3.0 * p.abs()) / 6.0;
        }
    }

    /// Exact change of the summed NLL if predictor `k` moves by `delta * x_t`.
    fn trial(&self, rows: &Rows, k: usize, delta: f64, x: Option<&[f64]>) -> f64 {
        let n = rows.eta.len();
        let xv = |t: usize| x.map_or(1.0, |c| c[t]);
        let mut s = 0.0;
        match k {
            0 | 1 => {
                let (z, zo, is) = if k == 0 {
                    (&self.zu, &self.zv, &self.inv_su)
                } else {
                    (&self.zv, &self.zu, &self.inv_sv)
                };
                for t in 0..n {
                    let d = delta * xv(t) * is[t];
                    s += 0.5 * self.q[t] * (d * d - 2.0 * z[t] * d) + self.c[t] * zo[t] * d;
                }
            }
            2 | 3 => {
                let (z, zo) = if k == 2 { (&self.zu, &self.zv) } else { (&self.zv, &self.zu) };
                for t in 0..n {
                    let d = delta * xv(t);
                    let m = (-d).exp();
                    s += d + 0.5 * self.q[t] * z[t] * z[t] * (m * m - 1.0) - self.c[t] * z[t] * zo[t] * (m - 1.0);
                }
            }
            _ => {
                for t in 0..n {
                    let e = rows.eta[t][4] + delta * xv(t);
                    let q = 1.0 + e * e;
                    let c = e * q.sqrt();
                    let (zu, zv) = (self.zu[t], self.zv[t]);
                    let new = -0.5 * q.ln() + 0.5 * q * (zu * zu + zv * zv) - c * zu * zv;
                    let old = -0.5 * self.q[t].ln() + 0.5 * self.q[t] * (zu * zu + zv * zv) - self.c[t] * zu * zv;
                    s += new - old;
                }
            }
        }
        s
    }
}

/// Boosting state over one training set.
pub struct BoostState<'a> {
    x: &'a [Vec<f64>],
    rows: Rows,
    work: Work,
    sum_sq: Vec<f64>,
    sq: Vec<Vec<f64>>,
    cube: Vec<Vec<f64>>,
    max_abs: Vec<f64>,
    active: Vec<bool>,
    pub coefficients: Vec<[f64; 5]>,
    nu: f64,
}

impl<'a> BoostState<'a> {
    /// `x[j][t]`: covariate j on row t. Columns flagged inactive never
    /// compete.
    pub fn new(x: &'a [Vec<f64>], y: &[[f64; 2]], active: Vec<bool>, nu: f64) -> Self {
        let n = y.len();
        let sum_sq = x.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let sq = x.iter().map(|c| c.iter().map(|v| v * v).collect()).collect();
        let cube = x.iter().map(|c| c.iter().map(|v| (v * v * v).abs()).collect()).collect();
        let max_abs = x.iter().map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        Self {
            x,
            sq,
            cube,
            max_abs,
            rows: Rows::new(y),
            work: Work::new(n),
            sum_sq,
            active,
            coefficients: vec![[0.0; 5]; x.len() + 1],
            nu,
        }
    }

    pub fn nll(&self) -> f64 {
        self.rows.total()
    }

    /// Candidate steps for every (predictor, column) pair, in index order,
    /// with a second-order estimate of the NLL change and a bound on its
    /// error. Mean predictors are quadratic, so their estimate is exact.
    fn candidates(&mut self) -> Vec<Candidate> {
        self.work.refresh(&self.rows);
        let n = self.rows.eta.len();
        let mut out = Vec::with_capacity(N_PREDICTORS * (self.x.len() + 1));
        for k in 0..N_PREDICTORS {
            let (g, h, r) = (&self.work.g[k], &self.work.h[k], &self.work.r[k]);
            for j in 0..=self.x.len() {
                let (lin, quad, rem, m) = if j == 0 {
                    let rem = if k >= 2 { r.iter().sum() } else { 0.0 };
                    (g.iter().sum::<f64>(), h.iter().sum::<f64>(), rem, 1.0)
                } else {
                    if !self.active[j - 1] || self.sum_sq[j - 1] == 0.0 {
                        continue;
                    }
                    let (c, c2, c3) = (&self.x[j - 1], &self.sq[j - 1], &self.cube[j - 1]);
                    let lin = dot(g, c);
                    let quad = dot(h, c2);
                    let rem = if k >= 2 { dot(r, c3) } else { 0.0 };
                    (lin, quad, rem, self.max_abs[j - 1])
                };
                let denom = if j == 0 { n as f64 } else { self.sum_sq[j - 1] };
                let delta = self.nu * lin / denom;
                if delta == 0.0 || !delta.is_finite() {
                    continue;
                }
                let est = -delta * lin + delta * delta * quad;
                let ad = delta.abs();
                let mut bound = ad * ad * ad * rem;
                if k == 2 || k == 3 {
                    bound *= (2.0 * ad * m).exp();
                }
                bound += 1e-10 * ((delta * lin).abs() + (delta * delta * quad).abs()) + 1e-13;
                out.push(Candidate {
                    step: Step { predictor: k, column: j, delta },
                    est,
                    bound: if k < 2 { 0.0 } else { bound },
                });
            }
        }
        out
    }

    /// Candidate with the smallest exact NLL change (first in index order
    /// on ties). Exact changes are computed only where the bounds cannot
    /// exclude a candidate.
    fn best_candidate(&mut self) -> Option<(Step, f64)> {
        let cands = self.candidates();
        let mut order: Vec<usize> = (0..cands.len()).collect();
        let lower = |c: &Candidate| c.est - c.bound;
        order.sort_by(|&a, &b| lower(&cands[a]).total_cmp(&lower(&cands[b])).then(a.cmp(&b)));
        let mut best: Option<(usize, f64)> = None;
        for i in order {
            let c = &cands[i];
            if let Some((_, b)) = best {
                if lower(c) > b {
                    break;
                }
            }
            let exact = if c.step.predictor < 2 {
                c.est
            } else {
                let col = (c.step.column > 0).then(|| self.x[c.step.column - 1].as_slice());
                self.work.trial(&self.rows, c.step.predictor, c.step.delta, col)
            };
            if !exact.is_finite() {
                continue;
            }
            if best.is_none_or(|(bi, b)| exact < b || (exact == b && i < bi)) {
                best = Some((i, exact));
            }
        }
        best.map(|(i, v)| (cands[i].step, v))
    }

    /// One boosting iteration. Returns the applied step, or `None` when no
    /// candidate lowers the NLL (the state is then unchanged).
    pub fn iterate(&mut self) -> Option<Step> {
        let (step, change) = self.best_candidate()?;
        if change >= 0.0 {
            return None;
        }
        let before = self.rows.clone();
        self.rows.apply(&step, self.x);
        if self.rows.total() > before.total() {
            // Rounding flipped the sign of a tiny improvement.
            self.rows = before;
            return None;
        }
        self.coefficients[step.column][step.predictor] += step.delta;
        Some(step)
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.split_at(a.len() / 4 * 4);
    let (bc, br) = b[..a.len()].split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct Candidate {
    step: Step,
    est: f64,
    bound: f64,
}

fn eval_nll(coef: &[[f64; 5]], x: &[Vec<f64>], y: &[[f64; 2]]) -> Vec<f64> {
    (0..y.len())
        .map(|t| {
            let mut e = coef[0];
            for (j, c) in coef.iter().enumerate().skip(1) {
                for k in 0..5 {
                    e[k] += c[k] * x[j - 1][t];
                }
            }
            row_nll(&e, y[t])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub covariate_names: Vec<String>,
    /// Row 0 is the intercept, row j covariate j - 1; columns follow
    /// (mu_u, mu_v, sigma_u, sigma_v, rho).
    pub coefficients: Vec<[f64; 5]>,
    pub m_stop: usize,
    pub config: BoostConfig,
    pub covariate_mean: Vec<f64>,
    pub covariate_sd: Vec<f64>,
    pub response_mean: [f64; 2],
    pub response_sd: [f64; 2],
    /// Mean out-of-fold NLL after 0..=max_iter iterations.
    pub cv_curve: Vec<f64>,
    /// Mean training NLL of the final model after 0..=m_stop iterations.
    pub train_curve: Vec<f64>,
    pub path: Vec<Step>,
    pub warnings: Vec<String>,
}

/// Contiguous, nearly equal blocks.
pub fn fold_bounds(n: usize, folds: usize) -> Vec<(usize, usize)> {
    (0..folds).map(|f| (f * n / folds, (f + 1) * n / folds)).collect()
}

fn column_stats(c: &[f64]) -> (f64, f64) {
    let n = c.len() as f64;
    let m = c.iter().sum::<f64>() / n;
    let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, sd)
}

/// Runs `iters` iterations and returns the training path.
fn run(x: &[Vec<f64>], y: &[[f64; 2]], active: Vec<bool>, nu: f64, iters: usize) -> (Vec<[f64; 5]>, Vec<Step>, Vec<f64>) {
    let mut st = BoostState::new(x, y, active, nu);
    let n = y.len() as f64;
    let mut path = Vec::with_capacity(iters);
    let mut curve = Vec::with_capacity(iters + 1);
    curve.push(st.nll() / n);
    for _ in 0..iters {
        match st.iterate() {
            Some(s) => path.push(s),
            None => path.push(Step {
                predictor: 0,
                column: 0,
                delta: 0.0,
            }),
        }
        curve.push(st.nll() / n);
    }
    (st.coefficients, path, curve)
}

/// Fits one station.
///
/// `covariates[t]` are raw C+ values; they and the responses are
/// standardized with the training statistics.
pub fn boost_fit(names: &[&str], covariates: &[Vec<f64>], y: &[[f64; 2]], config: &BoostConfig) -> Result<BoostModel> {
    config.validate()?;
    let n = y.len();
    let p = names.len();
    if covariates.len() != n {
        return Err(Error::invalid("covariate rows and responses differ in length"));
    }
    if n < config.folds * 10 {
        return Err(Error::invalid(format!(
            "boosting with {} folds needs at least {} training days, got {n}",
            config.folds,
            config.folds * 10
        )));
    }
    if covariates.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) || y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("boosting data must be complete and finite"));
    }
    let mut warnings = Vec::new();
    let mut cmean = vec![0.0; p];
    let mut csd = vec![1.0; p];
    let mut active = vec![true; p];
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = covariates.iter().map(|r| r[j]).collect();
        let (m, sd) = column_stats(&col);
        cmean[j] = m;
        if sd > 0.0 {
            csd[j] = sd;
        } else {
            active[j] = false;
            warnings.push(format!("covariate {} is constant and excluded", names[j]));
        }
        x.push(col.iter().map(|v| (v - m) / csd[j]).collect());
    }
    let mut rmean = [0.0; 2];
    let mut rsd = [0.0; 2];
    for k in 0..2 {
        let col: Vec<f64> = y.iter().map(|r| r[k]).collect();
        let (m, sd) = column_stats(&col);
        if !(sd > 0.0) {
            return Err(Error::DegenerateQuantity("response has zero variance".into()));
        }
        rmean[k] = m;
        rsd[k] = sd;
    }
    let z: Vec<[f64; 2]> = y
        .iter()
        .map(|r| [(r[0] - rmean[0]) / rsd[0], (r[1] - rmean[1]) / rsd[1]])
        .collect();

    let bounds = fold_bounds(n, config.folds);
    let fold_results: Vec<(Vec<f64>, Vec<String>)> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let take = |v: &[f64]| -> (Vec<f64>, Vec<f64>) {
                let train = v[..lo].iter().chain(&v[hi..]).copied().collect();
                (train, v[lo..hi].to_vec())
            };
            let mut xt = Vec::with_capacity(p);
            let mut xo = Vec::with_capacity(p);
            let mut act = active.clone();
            let mut warn = Vec::new();
            for j in 0..p {
                let (a, b) = take(&x[j]);
                if act[j] && column_stats(&a).1 == 0.0 {
                    act[j] = false;
                    warn.push(format!("covariate {} is constant in fold [{lo}, {hi}) and dropped there", names[j]));
                }
                xt.push(a);
                xo.push(b);
            }
            let zt: Vec<[f64; 2]> = z[..lo].iter().chain(&z[hi..]).copied().collect();
            let zo = &z[lo..hi];
            // Track out-of-fold NLL along the training path.
            let mut st = BoostState::new(&xt, &zt, act, config.learning_rate);
            let mut oof = Rows::new(zo);
            let mut curve = Vec::with_capacity(config.max_iter + 1);
            curve.push(oof.total() / zo.len() as f64);
            for _ in 0..config.max_iter {
                if let Some(s) = st.iterate() {
                    oof.apply(&s, &xo);
                }
                curve.push(oof.total() / zo.len() as f64);
            }
            (curve, warn)
        })
        .collect();
    let mut cv_curve = vec![0.0; config.max_iter + 1];
    for (c, w) in &fold_results {
        for (a, b) in cv_curve.iter_mut().zip(c) {
            *a += b / config.folds as f64;
        }
        warnings.extend(w.iter().cloned());
    }
    let m_stop = cv_curve
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0;
    let (coefficients, path, train_curve) = run(&x, &z, active, config.learning_rate, m_stop);
    Ok(BoostModel {
        covariate_names: names.iter().map(|s| s.to_string()).collect(),
        coefficients,
        m_stop,
        config: *config,
        covariate_mean: cmean,
        covariate_sd: csd,
        response_mean: rmean,
        response_sd: rsd,
        cv_curve,
        train_curve,
        path,
        warnings,
    })
}

impl BoostModel {
    pub fn standardize(&self, covariates: &[f64]) -> Result<Vec<f64>> {
        if covariates.len() != self.covariate_names.len() {
            return Err(Error::Schema(format!(
                "boosting model needs {} covariates, got {}",
                self.covariate_names.len(),
                covariates.len()
            )));
        }
        Ok(covariates
            .iter()
            .zip(self.covariate_mean.iter().zip(&self.covariate_sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    /// Predictors on the standardized response scale.
    pub fn predictors(&self, covariates: &[f64]) -> Result<PredictorVector> {
        let s = self.standardize(covariates)?;
        let mut e = self.coefficients[0];
        for (j, c) in self.coefficients.iter().enumerate().skip(1) {
            for k in 0..5 {
                e[k] += c[k] * s[j - 1];
            }
        }
        Ok(PredictorVector::from_array(e))
    }

    pub fn predict(&self, covariates: &[f64]) -> Result<BivNormalParams> {
        let z = link_to_params(&self.predictors(covariates)?)?;
        Ok(z.destandardize(self.response_mean, self.response_sd))
    }

    /// Covariates with at least one non-zero coefficient.
    pub fn selected(&self) -> Vec<bool> {
        self.coefficients[1..].iter().map(|c| c.iter().any(|v| *v != 0.0)).collect()
    }

    /// Mean NLL on the standardized scale over a data set.
    pub fn mean_nll_standardized(&self, covariates: &[Vec<f64>], y: &[[f64; 2]]) -> Result<f64> {
        let mut s = 0.0;
        for (c, r) in covariates.iter().zip(y) {
            let e = self.predictors(c)?.to_array();
            let z = [
                (r[0] - self.response_mean[0]) / self.response_sd[0],
                (r[1] - self.response_mean[1]) / self.response_sd[1],
            ];
            s += row_nll(&e, z);
        }
        Ok(s / y.len() as f64)
    }
}

/// Mean NLL of a coefficient table on standardized data (columns `x[j][t]`).
pub fn mean_nll(coef: &[[f64; 5]], x: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    eval_nll(coef, x, y).iter().sum::<f64>() / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::nll_and_gradient;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn data(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
        let mut rng = crate::rng::stream(seed, &[]);
        let x: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y = (0..n)
            .map(|t| {
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let s = (0.3 * x[1][t]).exp();
                [x[0][t] + s * e1, 0.5 * x[2][t] + 0.6 * s * e1 + 0.8 * e2]
            })
            .collect();
        (x, y)
    }

    #[test]
    fn row_nll_matches_gaussian_module() {
        let e = [0.3, -0.2, 0.1, -0.4, 0.7];
        let y = [1.0, -0.5];
        let (l, _) = nll_and_gradient(&PredictorVector::from_array(e), y);
        assert!((row_nll(&e, y) - l).abs() < 1e-12);
    }

    #[test]
    fn gradients_and_trials_match_direct_evaluation() {
        let (x, y) = data(3, 50, 3);
        let mut st = BoostState::new(&x, &y, vec![true; 3], 0.1);
        for _ in 0..7 {
            st.iterate();
        }
        st.work.refresh(&st.rows);
        for t in 0..5 {
            let (_, g) = nll_and_gradient(&PredictorVector::from_array(st.rows.eta[t]), y[t]);
            for k in 0..5 {
                assert!((st.work.g[k][t] + g[k]).abs() < 1e-10, "k={k}");
            }
        }
        for k in 0..5 {
            for (j, col) in [(0, None), (2, Some(x[1].as_slice()))] {
                let delta = 0.05;
                let fast = st.work.trial(&st.rows, k, delta, col);
                let mut r = st.rows.clone();
                r.apply(&Step { predictor: k, column: j, delta }, &x);
                let exact = r.total() - st.rows.total();
                assert!((fast - exact).abs() < 1e-9 * (1.0 + exact.abs()), "k={k} j={j} {fast} {exact}");
            }
        }
    }

    #[test]
    fn screening_bounds_hold_and_pick_the_exact_best() {
        let (x, y) = data(9, 200, 4);
        for nu in [0.1, 0.7] {
            let mut st = BoostState::new(&x, &y, vec![true; 4], nu);
            for _ in 0..40 {
                let cands = st.candidates();
                let mut brute: Option<(Step, f64)> = None;
                for c in &cands {
                    let col = (c.step.column > 0).then(|| x[c.step.column - 1].as_slice());
                    let exact = st.work.trial(&st.rows, c.step.predictor, c.step.delta, col);
                    assert!((exact - c.est).abs() <= c.bound + 1e-9 * (1.0 + exact.abs()), "{:?} {exact} {} {}", c.step, c.est, c.bound);
                    if brute.is_none_or(|(_, b)| exact < b) {
                        brute = Some((c.step, exact));
                    }
                }
                let (step, _) = st.best_candidate().unwrap();
                assert_eq!(step, brute.unwrap().0);
                if st.iterate().is_none() {
                    break;
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (x, y) = data(4, 60, 3);
        let mut st = BoostState::new(&x, &y, vec![true; 3], 0.0);
        let before = st.nll();
        assert_eq!(st.iterate(), None);
        assert_eq!(st.nll(), before);
        assert!(st.coefficients.iter().flatten().all(|c| *c == 0.0));
    }

    #[test]
    fn non_cyclic_and_monotone() {
        let (x, y) = data(5, 300, 4);
        let mut st = BoostState::new(&x, &y, vec![true; 4], 0.1);
        let mut prev_nll = st.nll();
        let mut prev = st.coefficients.clone();
        for _ in 0..150 {
            st.iterate();
            let changed = prev
                .iter()
                .flatten()
                .zip(st.coefficients.iter().flatten())
                .filter(|(a, b)| a != b)
                .count();
            assert!(changed <= 1);
            assert!(st.nll() <= prev_nll);
            prev_nll = st.nll();
            prev = st.coefficients.clone();
        }
        assert!(st.coefficients[1][0] > 0.5, "{:?}", st.coefficients[1]);
    }

    #[test]
    fn back_transform() {
        let model = BoostModel {
            covariate_names: vec!["a".into()],
            coefficients: vec![[0.0; 5], [0.0; 5]],
            m_stop: 0,
            config: BoostConfig::default(),
            covariate_mean: vec![0.0],
            covariate_sd: vec![1.0],
            response_mean: [2.0, -1.0],
            response_sd: [3.0, 2.0],
            cv_curve: vec![],
            train_curve: vec![],
            path: vec![],
            warnings: vec![],
        };
        let p = model.predict(&[0.7]).unwrap();
        assert_eq!((p.mu_u, p.mu_v, p.sigma_u, p.sigma_v, p.rho), (2.0, -1.0, 3.0, 2.0, 0.0));
    }

    #[test]
    fn fit_selects_informative_columns() {
        let (x, y) = data(6, 400, 5);
        let rows: Vec<Vec<f64>> = (0..400).map(|t| x.iter().map(|c| c[t]).collect()).collect();
        let cfg = BoostConfig {
            max_iter: 300,
            ..Default::default()
        };
        let m = boost_fit(&["a", "b", "c", "d", "e"], &rows, &y, &cfg).unwrap();
        let sel = m.selected();
        assert!(sel[0] && sel[2], "{sel:?}");
        assert!(m.m_stop <= 300);
        assert!(m.train_curve.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(m.cv_curve.len(), 301);
    }
}

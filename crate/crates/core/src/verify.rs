//! Multivariate verification: proper scores, aggregation, skill, score-based
//! PIT, reliability index, Diebold–Mariano tests and multiple-testing
//! correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::norm_cdf;

pub const PIT_BINS: usize = 17;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (d0, d1) = (a[0] - b[0], a[1] - b[1]);
    (d0 * d0 + d1 * d1).sqrt()
}

/// Energy score and ES-based PIT computed from one pass over the cross
/// distances of two independent samples of the same forecast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEvaluation {
    pub es: f64,
    pub pit: f64,
}

pub fn energy_evaluation(r: &[[f64; 2]], r_star: &[[f64; 2]], y: [f64; 2]) -> Result<EnergyEvaluation> {
    let n = r.len();
    if n == 0 || r_star.len() != n {
        return Err(Error::invalid("energy score needs two non-empty samples of equal size"));
    }
    let nf = n as f64;
    let to_y = r.iter().map(|&ri| dist(ri, y)).sum::<f64>() / nf;
    // col[j] = sum_i |r_i - r*_j|
    let mut total = 0.0;
    let mut below = 0usize;
    for &sj in r_star {
        let col: f64 = r.iter().map(|&ri| dist(ri, sj)).sum();
        total += col;
        if col / nf <= to_y {
            below += 1;
        }
    }
    Ok(EnergyEvaluation {
        es: to_y - total / (2.0 * nf * nf),
        pit: below as f64 / nf,
    })
}

/// `(1/n) sum_i |r_i - y| - (1/2n^2) sum_ij |r_i - r*_j|`.
pub fn energy_score(r: &[[f64; 2]], r_star: &[[f64; 2]], y: [f64; 2]) -> Result<f64> {
    Ok(energy_evaluation(r, r_star, y)?.es)
}

/// Fraction of `r*_i` whose estimated energy score does not exceed that of y.
pub fn es_pit(r: &[[f64; 2]], r_star: &[[f64; 2]], y: [f64; 2]) -> Result<f64> {
    Ok(energy_evaluation(r, r_star, y)?.pit)
}

/// Variogram score of order 0.5.
pub fn variogram_score(r: &[[f64; 2]], y: [f64; 2]) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::invalid("variogram score needs a non-empty sample"));
    }
    let m = r.iter().map(|p| (p[0] - p[1]).abs().sqrt()).sum::<f64>() / r.len() as f64;
    Ok(2.0 * ((y[0] - y[1]).abs().sqrt() - m).powi(2))
}

/// `-ln f(y)`; `None` when the log-density is not finite.
pub fn log_score(log_density: f64) -> Option<f64> {
    let s = -log_density;
    s.is_finite().then_some(s)
}

/// Fourth root of the determinant of the empirical covariance.
pub fn determinant_sharpness(r: &[[f64; 2]]) -> Result<f64> {
    if r.len() < 2 {
        return Err(Error::invalid("determinant sharpness needs at least two draws"));
    }
    let n = r.len() as f64;
    let (mu, mv) = (r.iter().map(|p| p[0]).sum::<f64>() / n, r.iter().map(|p| p[1]).sum::<f64>() / n);
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for p in r {
        let (a, b) = (p[0] - mu, p[1] - mv);
        suu += a * a;
        svv += b * b;
        suv += a * b;
    }
    let det = (suu * svv - suv * suv) / ((n - 1.0) * (n - 1.0));
    Ok(det.max(0.0).powf(0.25))
}

/// Determinant sharpness of a known covariance matrix.
pub fn determinant_sharpness_cov(cov: [[f64; 2]; 2]) -> f64 {
    (cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0]).max(0.0).powf(0.25)
}

/// `1 - model / reference`.
pub fn skill_score(model_mean: f64, reference_mean: f64) -> Result<f64> {
    if !(reference_mean > 0.0) {
        return Err(Error::UndefinedSkill(reference_mean));
    }
    Ok(1.0 - model_mean / reference_mean)
}

/// Relative frequencies over bins `[(m-1)/17, m/17)`; a value of exactly 1
/// falls into the last bin.
pub fn pit_histogram(pits: &[f64]) -> Vec<f64> {
    let mut counts = vec![0usize; PIT_BINS];
    for &p in pits {
        let b = ((p * PIT_BINS as f64).floor() as isize).clamp(0, PIT_BINS as isize - 1) as usize;
        counts[b] += 1;
    }
    let n = pits.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

pub fn reliability_index(pits: &[f64]) -> f64 {
    pit_histogram(pits).iter().map(|f| (f - 1.0 / PIT_BINS as f64).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Diebold–Mariano test of equal mean score; positive statistics favour B.
///
/// The long-run variance of `d_t = a_t - b_t` uses Bartlett weights up to lag
/// `floor(T^(1/3))`.
pub fn dm_test(a: &[f64], b: &[f64]) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::invalid("DM test needs equal-length score series"));
    }
    let t = a.len();
    if t < 30 {
        return Err(Error::invalid(format!("DM test needs at least 30 pairs, got {t}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite score differential"));
    }
    let tf = t as f64;
    let mean = d.iter().sum::<f64>() / tf;
    let lag = (tf.cbrt() + 1e-9).floor() as usize;
    let gamma = |k: usize| (k..t).map(|i| (d[i] - mean) * (d[i - k] - mean)).sum::<f64>() / tf;
    let mut var = gamma(0);
    for k in 1..=lag {
        var += 2.0 * (1.0 - k as f64 / (lag as f64 + 1.0)) * gamma(k);
    }
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(var > 1e-28 * scale * scale) || var <= 0.0 {
        return Err(Error::DegenerateSeries("score differentials have zero variance".into()));
    }
    let statistic = tf.sqrt() * mean / var.sqrt();
    Ok(DmResult {
        statistic,
        p_value: 2.0 * norm_cdf(-statistic.abs()),
    })
}

/// Step-up rejection flags, in input order.
pub fn benjamini_hochberg(p: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let k_star = (1..=m).rev().find(|&k| p[order[k - 1]] <= k as f64 * alpha / m as f64);
    let mut out = vec![false; m];
    if let Some(k) = k_star {
        // Ties at the threshold are all rejected, keeping permutation invariance.
        let cut = p[order[k - 1]];
        for (i, &pi) in p.iter().enumerate() {
            out[i] = pi <= cut;
        }
    }
    Ok(out)
}

/// Residuals of `y` after least-squares projection on an intercept and the
/// given columns (modified Gram–Schmidt).
fn residualize(y: &[f64], columns: &[Vec<f64>]) -> Vec<f64> {
    let n = y.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let add = |mut c: Vec<f64>, basis: &mut Vec<Vec<f64>>| {
        let scale = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        for q in basis.iter() {
            let proj: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * scale.max(1e-300) {
            c.iter_mut().for_each(|a| *a /= norm);
            basis.push(c);
        }
    };
    add(vec![1.0; n], &mut basis);
    for c in columns {
        add(c.clone(), &mut basis);
    }
    let mut r = y.to_vec();
    for q in &basis {
        let proj: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Correlation of u and v after removing their linear dependence on the
/// covariate columns.
pub fn partial_correlation(u: &[f64], v: &[f64], covariates: &[Vec<f64>]) -> Result<f64> {
    if u.len() != v.len() || covariates.iter().any(|c| c.len() != u.len()) {
        return Err(Error::invalid("partial correlation inputs differ in length"));
    }
    if u.len() < covariates.len() + 3 {
        return Err(Error::invalid("too few observations for partial correlation"));
    }
    let ru = residualize(u, covariates);
    let rv = residualize(v, covariates);
    let c = pearson(&ru, &rv);
    if !c.is_finite() {
        return Err(Error::DegenerateQuantity("residuals have zero variance".into()));
    }
    Ok(c)
}

/// One-sample Kolmogorov–Smirnov test against U(0, 1); returns (D, p).
pub fn ks_uniform(x: &[f64]) -> (f64, f64) {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - v).max(v - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// One verified forecast case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub station: u32,
    pub date: chrono::NaiveDate,
    pub es: f64,
    pub vs: f64,
    /// `None` when the log-density was not finite.
    pub logs: Option<f64>,
    pub ds: f64,
    pub pit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LogsExclusion {
    /// Drop only the offending (model, station, day).
    #[default]
    PerCase,
    /// Drop a (station, day) for every model once any model's LogS is infinite.
    AcrossModels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanScores {
    pub es: f64,
    pub vs: f64,
    pub logs: f64,
    pub ds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub model: String,
    pub per_station: BTreeMap<u32, MeanScores>,
    pub overall: MeanScores,
    pub logs_dropped: usize,
    pub days: usize,
    pub stations: usize,
    pub ri: f64,
}

/// Per-station means and the overall mean of those station means, per model.
pub fn aggregate(rows: &[ScoreRow], exclusion: LogsExclusion) -> BTreeMap<String, ModelSummary> {
    let blocked: std::collections::BTreeSet<(u32, chrono::NaiveDate)> = match exclusion {
        LogsExclusion::PerCase => Default::default(),
        LogsExclusion::AcrossModels => rows.iter().filter(|r| r.logs.is_none()).map(|r| (r.station, r.date)).collect(),
    };
    let mut by_model: BTreeMap<&str, BTreeMap<u32, Vec<&ScoreRow>>> = BTreeMap::new();
    for r in rows {
        by_model.entry(&r.model).or_default().entry(r.station).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (model, stations) in by_model {
        let mut per_station = BTreeMap::new();
        let mut dropped = 0;
        let mut days = 0;
        let mut pits = Vec::new();
        for (&st, rs) in &stations {
            let n = rs.len() as f64;
            days = days.max(rs.len());
            let logs: Vec<f64> = rs
                .iter()
                .filter(|r| !blocked.contains(&(r.station, r.date)))
                .filter_map(|r| r.logs)
                .collect();
            dropped += rs.len() - logs.len();
            pits.extend(rs.iter().map(|r| r.pit));
            per_station.insert(
                st,
                MeanScores {
                    es: rs.iter().map(|r| r.es).sum::<f64>() / n,
                    vs: rs.iter().map(|r| r.vs).sum::<f64>() / n,
                    logs: if logs.is_empty() { f64::NAN } else { logs.iter().sum::<f64>() / logs.len() as f64 },
                    ds: rs.iter().map(|r| r.ds).sum::<f64>() / n,
                },
            );
        }
        let l = per_station.len() as f64;
        let mean_of = |f: fn(&MeanScores) -> f64| per_station.values().map(f).sum::<f64>() / l;
        let overall = MeanScores {
            es: mean_of(|m| m.es),
            vs: mean_of(|m| m.vs),
            logs: mean_of(|m| m.logs),
            ds: mean_of(|m| m.ds),
        };
        out.insert(
            model.to_string(),
            ModelSummary {
                model: model.to_string(),
                stations: per_station.len(),
                per_station,
                overall,
                logs_dropped: dropped,
                days,
                ri: reliability_index(&pits),
            },
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn energy_score_examples() {
        let y = [0.3, -1.0];
        assert_eq!(energy_score(&[y; 5], &[y; 5], y).unwrap(), 0.0);
        assert_eq!(energy_score(&[[1.0, 0.0]], &[[1.0, 0.0]], [0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn variogram_examples() {
        assert!(variogram_score(&[[1.0, 4.0]; 3], [1.0, 4.0]).unwrap() < 1e-30);
        assert!((variogram_score(&[[0.0, 0.0]], [1.0, 4.0]).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn log_score_examples() {
        assert_eq!(log_score(0.0), Some(0.0));
        let std = crate::gaussian::BivNormalParams::standard();
        assert!((log_score(std.logpdf([0.0, 0.0]).unwrap()).unwrap() - 1.837_877_066_409_345).abs() < 1e-12);
        assert_eq!(log_score(f64::NEG_INFINITY), None);
    }

    #[test]
    fn determinant_sharpness_examples() {
        assert!((determinant_sharpness_cov([[1.0, 0.0], [0.0, 1.0]]) - 1.0).abs() < 1e-15);
        assert!((determinant_sharpness_cov([[4.0, 0.0], [0.0, 1.0]]) - 2f64.sqrt()).abs() < 1e-15);
        // Sample with identity empirical covariance.
        let r = [[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
        let s = determinant_sharpness(&r).unwrap();
        assert!((s - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn skill_examples() {
        assert_eq!(skill_score(1.0, 2.0).unwrap(), 0.5);
        assert_eq!(skill_score(3.0, 3.0).unwrap(), 0.0);
        assert!(matches!(skill_score(1.0, 0.0), Err(Error::UndefinedSkill(_))));
    }

    #[test]
    fn pit_far_observation_is_one() {
        let r: Vec<[f64; 2]> = (0..50).map(|i| [i as f64 * 0.01, 0.0]).collect();
        assert_eq!(es_pit(&r, &r, [100.0, 100.0]).unwrap(), 1.0);
        let mid = es_pit(&r, &r, [0.25, 0.0]).unwrap();
        assert!((0.0..1.0).contains(&mid));
    }

    #[test]
    fn reliability_examples() {
        let uniform: Vec<f64> = (0..17).map(|m| (m as f64 + 0.5) / 17.0).collect();
        assert!(reliability_index(&uniform) < 1e-15);
        let lumped = vec![0.01; 100];
        assert!((reliability_index(&lumped) - 32.0 / 17.0).abs() < 1e-12);
        assert_eq!(pit_histogram(&[1.0])[PIT_BINS - 1], 1.0);
    }

    #[test]
    fn dm_identical_series_is_degenerate() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        assert!(matches!(dm_test(&a, &a), Err(Error::DegenerateSeries(_))));
        assert!(dm_test(&a[..10], &a[..10]).is_err());
    }

    #[test]
    fn bh_examples() {
        assert_eq!(benjamini_hochberg(&[0.01, 0.02, 0.04], 0.05).unwrap(), vec![true; 3]);
        assert_eq!(benjamini_hochberg(&[1.0; 4], 0.05).unwrap(), vec![false; 4]);
        assert_eq!(benjamini_hochberg(&[0.04], 0.05).unwrap(), vec![true]);
        assert_eq!(benjamini_hochberg(&[0.01, 0.04, 0.045], 0.05).unwrap(), vec![true, true, true]);
        assert_eq!(benjamini_hochberg(&[0.02, 0.04, 0.9], 0.05).unwrap(), vec![false, false, false]);
    }

    #[test]
    fn partial_correlation_without_covariates_is_pearson() {
        let u = [1.0, 2.0, 3.0, 4.0, 6.0];
        let v = [2.0, 1.0, 4.0, 3.0, 7.0];
        assert!((partial_correlation(&u, &v, &[]).unwrap() - pearson(&u, &v)).abs() < 1e-12);
    }

    #[test]
    fn partial_correlation_removes_common_driver() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::rng::stream(8, &[]);
        let z: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = z.iter().map(|x| x + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let v: Vec<f64> = z.iter().map(|x| 2.0 * x + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(pearson(&u, &v) > 0.8);
        assert!(partial_correlation(&u, &v, &[z.clone()]).unwrap().abs() < 0.05);
        let w: Vec<f64> = u.iter().map(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(partial_correlation(&u, &w, &[]).unwrap() > 0.9);
    }

    #[test]
    fn ks_detects_nonuniformity() {
        let good: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&good).1 > 0.99);
        let bad: Vec<f64> = good.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&bad).1 < 1e-6);
    }

    fn row(model: &str, station: u32, day: u32, es: f64, logs: Option<f64>) -> ScoreRow {
        ScoreRow {
            model: model.into(),
            station,
            date: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(day.into()),
            es,
            vs: es,
            logs,
            ds: 1.0,
            pit: 0.5,
        }
    }

    #[test]
    fn aggregate_is_mean_of_station_means() {
        let rows = vec![
            row("a", 1, 0, 1.0, Some(1.0)),
            row("a", 1, 1, 3.0, None),
            row("a", 2, 0, 10.0, Some(2.0)),
            row("b", 1, 0, 1.0, Some(5.0)),
        ];
        let agg = aggregate(&rows, LogsExclusion::PerCase);
        let a = &agg["a"];
        assert_eq!(a.overall.es, (2.0 + 10.0) / 2.0);
        assert_eq!(a.overall.logs, 1.5);
        assert_eq!(a.logs_dropped, 1);
        let across = aggregate(&rows, LogsExclusion::AcrossModels);
        assert_eq!(across["a"].logs_dropped, 1);
        assert_eq!(across["b"].logs_dropped, 0);
    }

    proptest! {
        #[test]
        fn scores_are_nonnegative(seed in 0u64..300, n in 2usize..40) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, &[4]);
            let r: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
            let y = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            prop_assert!(energy_score(&r, &r, y).unwrap() >= -1e-12);
            prop_assert!(variogram_score(&r, y).unwrap() >= 0.0);
            prop_assert!(determinant_sharpness(&r).unwrap() >= 0.0);
            let p = es_pit(&r, &r, y).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn dm_is_antisymmetric(seed in 0u64..300) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, &[5]);
            let a: Vec<f64> = (0..60).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..60).map(|_| rng.random()).collect();
            let ab = dm_test(&a, &b).unwrap();
            let ba = dm_test(&b, &a).unwrap();
            prop_assert!((ab.statistic + ba.statistic).abs() < 1e-12);
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        }

        #[test]
        fn bh_is_permutation_invariant(seed in 0u64..300, m in 1usize..30) {
            use rand::Rng;
            use rand::seq::SliceRandom;
            let mut rng = crate::rng::stream(seed, &[6]);
            let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 0.2).collect();
            let flags = benjamini_hochberg(&p, 0.05).unwrap();
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng);
            let q: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let g = benjamini_hochberg(&q, 0.05).unwrap();
            for (k, &i) in idx.iter().enumerate() {
                prop_assert_eq!(g[k], flags[i]);
            }
        }

        #[test]
        fn pit_histogram_sums_to_one(seed in 0u64..300) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, &[7]);
            let p: Vec<f64> = (0..100).map(|_| rng.random()).collect();
            prop_assert!((pit_histogram(&p).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

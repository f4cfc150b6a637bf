//! Gaussian-kernel density estimate of a univariate margin.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, solve_monotone_from};

/// Kernel contributions beyond this many bandwidths are exactly 0 or 1 in
/// double precision (to within 1e-19).
const CUTOFF: f64 = 9.0;
const TABLE_SIZE: usize = 4097;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
    #[serde(skip)]
    table: OnceLock<Table>,
}

impl PartialEq for Kde {
    fn eq(&self, other: &Self) -> bool {
        self.samples == other.samples && self.bandwidth == other.bandwidth
    }
}

/// Cubic Hermite representation of the CDF on a uniform grid.
#[derive(Debug, Clone)]
struct Table {
    x0: f64,
    dx: f64,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    /// Largest deviation of the interpolant from the exact CDF at the
    /// segment midpoints.
    max_err: f64,
}

fn quantile_of_sorted(s: &[f64], p: f64) -> f64 {
    let pos = p * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < s.len() {
        s[i] * (1.0 - f) + s[i + 1] * f
    } else {
        s[i]
    }
}

impl Kde {
    /// Silverman rule-of-thumb bandwidth times `bandwidth_scale`.
    pub fn fit(samples: &[f64], bandwidth_scale: f64) -> Result<Self> {
        if samples.len() < 30 {
            return Err(Error::invalid(format!("KDE needs at least 30 samples, got {}", samples.len())));
        }
        if !(bandwidth_scale > 0.0 && bandwidth_scale.is_finite()) {
            return Err(Error::Config("bandwidth scale must be positive".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite KDE sample"));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let iqr = quantile_of_sorted(&s, 0.75) - quantile_of_sorted(&s, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        if !(spread > 0.0) {
            return Err(Error::DegenerateQuantity("KDE sample has zero spread".into()));
        }
        Self::with_bandwidth(s, 0.9 * spread * n.powf(-0.2) * bandwidth_scale)
    }

    pub fn with_bandwidth(mut samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid("KDE bandwidth must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("KDE needs samples"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self {
            samples,
            bandwidth,
            table: OnceLock::new(),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    fn window(&self, x: f64) -> (usize, usize) {
        let r = CUTOFF * self.bandwidth;
        let lo = self.samples.partition_point(|&s| s < x - r);
        let hi = self.samples.partition_point(|&s| s <= x + r);
        (lo, hi)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let h = self.bandwidth;
        let inner: f64 = self.samples[lo..hi].iter().map(|&s| norm_cdf((x - s) / h)).sum();
        (lo as f64 + inner) / self.samples.len() as f64
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let h = self.bandwidth;
        let s: f64 = self.samples[lo..hi].iter().map(|&s| norm_pdf((x - s) / h)).sum();
        s / (self.samples.len() as f64 * h)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }

    fn support(&self) -> (f64, f64) {
        let r = (CUTOFF + 1.0) * self.bandwidth;
        (self.samples[0] - r, self.samples[self.samples.len() - 1] + r)
    }

    fn table(&self) -> &Table {
        self.table.get_or_init(|| {
            let (a, b) = self.support();
            let dx = (b - a) / (TABLE_SIZE - 1) as f64;
            let xs = (0..TABLE_SIZE).map(|i| a + i as f64 * dx);
            let (cdf, pdf): (Vec<f64>, Vec<f64>) = xs.map(|x| (self.cdf(x), self.pdf(x))).unzip();
            let mut t = Table { x0: a, dx, cdf, pdf, max_err: 0.0 };
            t.max_err = (0..TABLE_SIZE - 1)
                .map(|i| (hermite_eval(&t, i, 0.5).0 - self.cdf(a + (i as f64 + 0.5) * dx)).abs())
                .fold(0.0, f64::max);
            t
        })
    }

    /// Inverse CDF. Inside the grid the cubic Hermite table is inverted; that
    /// value is returned as is when the table's error bound is below 1e-11,
    /// and otherwise seeds safeguarded Newton on the exact CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {p}")));
        }
        let t = self.table();
        let k = t.cdf.partition_point(|&c| c < p);
        let (lo, hi) = if k == 0 {
            (t.x0 - 40.0 * self.bandwidth, t.x0)
        } else if k >= t.cdf.len() {
            let end = t.x0 + (t.cdf.len() - 1) as f64 * t.dx;
            (end, end + 40.0 * self.bandwidth)
        } else {
            (t.x0 + (k - 1) as f64 * t.dx, t.x0 + k as f64 * t.dx)
        };
        let x0 = if k == 0 || k >= t.cdf.len() {
            0.5 * (lo + hi)
        } else {
            let x = hermite_inverse(t, k - 1, p);
            if t.max_err < 1e-11 {
                return Ok(x);
            }
            x
        };
        let xtol = 1e-13 * (self.bandwidth + lo.abs().max(hi.abs()));
        Ok(solve_monotone_from(|x| (self.cdf(x), self.pdf(x)), p, lo, hi, x0, xtol))
    }
}

/// Value and slope (per unit of s) of the Hermite interpolant on segment `i`
/// at local coordinate `s` in [0, 1].
fn hermite_eval(t: &Table, i: usize, s: f64) -> (f64, f64) {
    let (f0, f1) = (t.cdf[i], t.cdf[i + 1]);
    let (d0, d1) = (t.pdf[i] * t.dx, t.pdf[i + 1] * t.dx);
    let (s2, s3) = (s * s, s * s * s);
    let v = (2.0 * s3 - 3.0 * s2 + 1.0) * f0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * f1 + (s3 - s2) * d1;
    let dv = (6.0 * s2 - 6.0 * s) * f0 + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (-6.0 * s2 + 6.0 * s) * f1 + (3.0 * s2 - 2.0 * s) * d1;
    (v, dv)
}

/// Solves the cubic Hermite interpolant of segment `i` for `p`.
fn hermite_inverse(t: &Table, i: usize, p: f64) -> f64 {
    let (f0, f1) = (t.cdf[i], t.cdf[i + 1]);
    let s = if f1 > f0 {
        solve_monotone_from(|s| hermite_eval(t, i, s), p, 0.0, 1.0, (p - f0) / (f1 - f0), 1e-14)
    } else {
        0.5
    };
    t.x0 + (i as f64 + s) * t.dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn symmetric_sample_has_half_mass_at_zero() {
        let s: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.3).collect();
        let k = Kde::fit(&s, 1.0).unwrap();
        assert!((k.cdf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cdf_is_monotone_with_correct_limits() {
        let mut rng = crate::rng::stream(5, &[]);
        let s: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0 + 1.0).collect();
        let k = Kde::fit(&s, 1.0).unwrap();
        let mut prev = 0.0;
        for i in -400..=400 {
            let f = k.cdf(i as f64 * 0.05);
            assert!(f >= prev);
            prev = f;
        }
        assert!(k.cdf(-1e6) < 1e-15);
        assert!(k.cdf(1e6) > 1.0 - 1e-15);
    }

    #[test]
    fn standard_normal_sample_close_to_phi() {
        let mut rng = crate::rng::stream(6, &[]);
        let s: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let k = Kde::fit(&s, 1.0).unwrap();
        let sup = (-400..=400)
            .map(|i| {
                let x = i as f64 * 0.01;
                (k.cdf(x) - norm_cdf(x)).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup < 0.03, "{sup}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        let mut rng = crate::rng::stream(7, &[]);
        let s: Vec<f64> = (0..300).map(|_| rng.random::<f64>().powi(3) * 10.0).collect();
        let k = Kde::fit(&s, 1.0).unwrap();
        for p in [1e-10, 1e-6, 0.01, 0.3, 0.5, 0.9, 0.999_999, 1.0 - 1e-10] {
            let x = k.quantile(p).unwrap();
            assert!((k.cdf(x) - p).abs() < 1e-8, "p={p}");
        }
        assert!(k.quantile(0.0).is_err());
        assert!(k.quantile(1.0).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        let s: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        let k = Kde::fit(&s, 1.0).unwrap();
        let (a, b) = k.support();
        let total = crate::special::integrate(|x| k.pdf(x), a, b, 200, 8);
        assert!((total - 1.0).abs() < 1e-10);
    }
}

//! Bernstein copula of fixed degree m.
//!
//! `c(u, v) = sum_ij w_ij * Be_i(u) * Be_j(v)` where `Be_i` is the
//! Beta(i + 1, m - i) density and `w` is an m x m doubly stochastic weight
//! matrix scaled so every row and column sums to 1/m. The CDF factor of `Be_i`
//! is `G_i(u) = P(Bin(m, u) >= i + 1)`.

use serde::{Deserialize, Serialize};

use crate::special::solve_monotone;

pub const DEGREE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinGrid {
    pub degree: usize,
    /// Row-major m x m weights.
    pub weights: Vec<f64>,
}

/// Beta(i + 1, m - i) densities at u, for i = 0..m.
fn beta_densities(m: usize, u: f64) -> Vec<f64> {
    // m * C(m-1, i) u^i (1-u)^(m-1-i)
    let mut out = vec![0.0; m];
    let mut binom = 1.0;
    for (i, o) in out.iter_mut().enumerate() {
        *o = m as f64 * binom * u.powi(i as i32) * (1.0 - u).powi((m - 1 - i) as i32);
        binom = binom * (m - 1 - i) as f64 / (i + 1) as f64;
    }
    out
}

/// `G_i(u) = P(Bin(m, u) >= i + 1)` for i = 0..m.
fn beta_cdfs(m: usize, u: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; m + 1];
    let mut binom = 1.0;
    for (k, p) in pmf.iter_mut().enumerate() {
        *p = binom * u.powi(k as i32) * (1.0 - u).powi((m - k) as i32);
        binom = binom * (m - k) as f64 / (k + 1) as f64;
    }
    let mut out = vec![0.0; m];
    let mut tail = 0.0;
    for i in (0..m).rev() {
        tail += pmf[i + 1];
        out[i] = tail.min(1.0);
    }
    out
}

impl BernsteinGrid {
    /// Smoothed cell frequencies of the pseudo-observations, balanced to
    /// exact uniform margins by Sinkhorn iterations.
    pub fn fit(u: &[f64], v: &[f64]) -> Self {
        let m = DEGREE;
        let mut w = vec![0.5; m * m];
        for (&a, &b) in u.iter().zip(v) {
            let i = ((a * m as f64) as usize).min(m - 1);
            let j = ((b * m as f64) as usize).min(m - 1);
            w[i * m + j] += 1.0;
        }
        let target = 1.0 / m as f64;
        for _ in 0..10_000 {
            for i in 0..m {
                let s: f64 = w[i * m..(i + 1) * m].iter().sum();
                for x in &mut w[i * m..(i + 1) * m] {
                    *x *= target / s;
                }
            }
            let mut worst: f64 = 0.0;
            for j in 0..m {
                let s: f64 = (0..m).map(|i| w[i * m + j]).sum();
                worst = worst.max((s - target).abs());
                for i in 0..m {
                    w[i * m + j] *= target / s;
                }
            }
            if worst < 1e-15 {
                break;
            }
        }
        Self { degree: m, weights: w }
    }

    pub fn independence(m: usize) -> Self {
        Self {
            degree: m,
            weights: vec![1.0 / (m * m) as f64; m * m],
        }
    }

    pub fn is_valid(&self) -> bool {
        let m = self.degree;
        if m < 2 || self.weights.len() != m * m || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return false;
        }
        let target = 1.0 / m as f64;
        (0..m).all(|i| {
            let row: f64 = self.weights[i * m..(i + 1) * m].iter().sum();
            let col: f64 = (0..m).map(|k| self.weights[k * m + i]).sum();
            (row - target).abs() < 1e-6 && (col - target).abs() < 1e-6
        })
    }

    /// Effective number of parameters used in information criteria.
    pub fn n_params(&self) -> usize {
        (self.degree - 1) * (self.degree - 1)
    }

    fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = self.degree;
        let mut s = 0.0;
        for i in 0..m {
            let row = &self.weights[i * m..(i + 1) * m];
            let inner: f64 = row.iter().zip(b).map(|(w, bj)| w * bj).sum();
            s += a[i] * inner;
        }
        s
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.bilinear(&beta_densities(self.degree, u), &beta_densities(self.degree, v))
    }

    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        self.bilinear(&beta_cdfs(self.degree, u), &beta_cdfs(self.degree, v))
    }

    /// P(U <= u | V = v).
    pub fn h2(&self, u: f64, v: f64) -> f64 {
        self.bilinear(&beta_cdfs(self.degree, u), &beta_densities(self.degree, v))
            .clamp(0.0, 1.0)
    }

    /// P(V <= v | U = u).
    pub fn h1(&self, u: f64, v: f64) -> f64 {
        self.bilinear(&beta_densities(self.degree, u), &beta_cdfs(self.degree, v))
            .clamp(0.0, 1.0)
    }

    pub fn hinv2(&self, p: f64, v: f64) -> f64 {
        let bv = beta_densities(self.degree, v);
        solve_monotone(
            |u| {
                (
                    self.bilinear(&beta_cdfs(self.degree, u), &bv),
                    self.bilinear(&beta_densities(self.degree, u), &bv),
                )
            },
            p,
            0.0,
            1.0,
            1e-15,
        )
    }

    pub fn hinv1(&self, p: f64, u: f64) -> f64 {
        let bu = beta_densities(self.degree, u);
        solve_monotone(
            |v| {
                (
                    self.bilinear(&bu, &beta_cdfs(self.degree, v)),
                    self.bilinear(&bu, &beta_densities(self.degree, v)),
                )
            },
            p,
            0.0,
            1.0,
            1e-15,
        )
    }

    /// Kendall's tau, `4 E[C(U, V)] - 1`, by quadrature.
    pub fn tau(&self) -> f64 {
        let (x, w) = crate::special::gauss_legendre(24);
        let mut e = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            for (xj, wj) in x.iter().zip(&w) {
                let (a, b) = (0.5 * (xi + 1.0), 0.5 * (xj + 1.0));
                e += 0.25 * wi * wj * self.cdf(a, b) * self.pdf(a, b);
            }
        }
        4.0 * e - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinkhorn_gives_uniform_margins() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, &[]);
        let u: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let v: Vec<f64> = u.iter().map(|x| (x * x + 0.1 * rng.random::<f64>()).min(0.999)).collect();
        let g = BernsteinGrid::fit(&u, &v);
        assert!(g.is_valid());
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_sums_to_one() {
        for u in [0.01, 0.3, 0.77] {
            let d = beta_densities(DEGREE, u);
            assert!((d.iter().sum::<f64>() - DEGREE as f64).abs() < 1e-12);
            let c = beta_cdfs(DEGREE, u);
            // Sum of tail probabilities is the binomial mean.
            assert!((c.iter().sum::<f64>() - DEGREE as f64 * u).abs() < 1e-12);
        }
    }

    #[test]
    fn independence_grid_is_product() {
        let g = BernsteinGrid::independence(DEGREE);
        assert!((g.pdf(0.2, 0.9) - 1.0).abs() < 1e-12);
        assert!((g.cdf(0.2, 0.9) - 0.18).abs() < 1e-12);
        assert!(g.tau().abs() < 1e-10);
    }
}

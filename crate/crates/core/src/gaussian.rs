//! Bivariate Gaussian predictive distribution shared by the EMOS, boosting
//! and network models.
//!
//! Parameters are linked to five unconstrained predictors: identity for the
//! means, log for the scales and `rho / sqrt(1 - rho^2) = eta_rho` for the
//! correlation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::special::LN_2PI;

/// Largest admissible |rho| after inverting the correlation link.
pub const RHO_BOUND: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivNormalParams {
    pub mu_u: f64,
    pub mu_v: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictorVector {
    pub eta_mu_u: f64,
    pub eta_mu_v: f64,
    pub eta_sigma_u: f64,
    pub eta_sigma_v: f64,
    pub eta_rho: f64,
}

impl PredictorVector {
    pub const LEN: usize = 5;

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            eta_mu_u: a[0],
            eta_mu_v: a[1],
            eta_sigma_u: a[2],
            eta_sigma_v: a[3],
            eta_rho: a[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.eta_mu_u,
            self.eta_mu_v,
            self.eta_sigma_u,
            self.eta_sigma_v,
            self.eta_rho,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in ["eta_mu_u", "eta_mu_v", "eta_sigma_u", "eta_sigma_v", "eta_rho"]
            .iter()
            .zip(self.to_array())
        {
            ensure_finite(name, v)?;
        }
        Ok(())
    }
}

impl BivNormalParams {
    pub fn new(mu_u: f64, mu_v: f64, sigma_u: f64, sigma_v: f64, rho: f64) -> Result<Self> {
        let p = Self {
            mu_u,
            mu_v,
            sigma_u,
            sigma_v,
            rho,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn standard() -> Self {
        Self {
            mu_u: 0.0,
            mu_v: 0.0,
            sigma_u: 1.0,
            sigma_v: 1.0,
            rho: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("mu_u", self.mu_u)?;
        ensure_finite("mu_v", self.mu_v)?;
        if !(self.sigma_u > 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::invalid(format!("sigma_u must be positive, got {}", self.sigma_u)));
        }
        if !(self.sigma_v > 0.0 && self.sigma_v.is_finite()) {
            return Err(Error::invalid(format!("sigma_v must be positive, got {}", self.sigma_v)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// Covariance matrix `[[s_uu, s_uv], [s_uv, s_vv]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = self.rho * self.sigma_u * self.sigma_v;
        [[self.sigma_u * self.sigma_u, c], [c, self.sigma_v * self.sigma_v]]
    }

    pub fn det(&self) -> f64 {
        let s = self.sigma_u * self.sigma_v;
        s * s * (1.0 - self.rho * self.rho)
    }

    /// Maps standardized-scale parameters back to the data scale given the
    /// response means and standard deviations used for standardization.
    pub fn destandardize(&self, mean: [f64; 2], sd: [f64; 2]) -> Self {
        Self {
            mu_u: self.mu_u * sd[0] + mean[0],
            mu_v: self.mu_v * sd[1] + mean[1],
            sigma_u: self.sigma_u * sd[0],
            sigma_v: self.sigma_v * sd[1],
            rho: self.rho,
        }
    }

    pub fn logpdf(&self, y: [f64; 2]) -> Result<f64> {
        self.validate()?;
        ensure_finite("y_u", y[0])?;
        ensure_finite("y_v", y[1])?;
        Ok(self.logpdf_unchecked(y))
    }

    /// Log-density without validation; callers guarantee valid parameters.
    #[inline]
    pub fn logpdf_unchecked(&self, y: [f64; 2]) -> f64 {
        let zu = (y[0] - self.mu_u) / self.sigma_u;
        let zv = (y[1] - self.mu_v) / self.sigma_v;
        let one_m_r2 = 1.0 - self.rho * self.rho;
        let q = (zu * zu - 2.0 * self.rho * zu * zv + zv * zv) / one_m_r2;
        -LN_2PI - self.sigma_u.ln() - self.sigma_v.ln() - 0.5 * one_m_r2.ln() - 0.5 * q
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        self.validate()?;
        let k = (1.0 - self.rho * self.rho).sqrt();
        Ok((0..n)
            .map(|_| {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                [
                    self.mu_u + self.sigma_u * z1,
                    self.mu_v + self.sigma_v * (self.rho * z1 + k * z2),
                ]
            })
            .collect())
    }
}

#[inline]
fn rho_from_eta(eta: f64) -> f64 {
    (eta / (1.0 + eta * eta).sqrt()).clamp(-RHO_BOUND, RHO_BOUND)
}

pub fn link_to_params(eta: &PredictorVector) -> Result<BivNormalParams> {
    eta.validate()?;
    let p = link_to_params_unchecked(eta);
    if !(p.sigma_u > 0.0 && p.sigma_u.is_finite() && p.sigma_v > 0.0 && p.sigma_v.is_finite()) {
        return Err(Error::invalid("scale predictor overflows the log link"));
    }
    Ok(p)
}

#[inline]
pub fn link_to_params_unchecked(eta: &PredictorVector) -> BivNormalParams {
    BivNormalParams {
        mu_u: eta.eta_mu_u,
        mu_v: eta.eta_mu_v,
        sigma_u: eta.eta_sigma_u.exp(),
        sigma_v: eta.eta_sigma_v.exp(),
        rho: rho_from_eta(eta.eta_rho),
    }
}

/// Inverse of [`link_to_params`].
pub fn params_to_link(p: &BivNormalParams) -> PredictorVector {
    PredictorVector {
        eta_mu_u: p.mu_u,
        eta_mu_v: p.mu_v,
        eta_sigma_u: p.sigma_u.ln(),
        eta_sigma_v: p.sigma_v.ln(),
        eta_rho: p.rho / (1.0 - p.rho * p.rho).sqrt(),
    }
}

/// Negative log-density at `y` and its gradient with respect to the five
/// predictors.
///
/// The correlation derivative uses `d rho / d eta = (1 - rho^2)^{3/2}` even
/// when the boundary clamp is active.
#[inline]
pub fn nll_and_gradient(eta: &PredictorVector, y: [f64; 2]) -> (f64, [f64; 5]) {
    let su = eta.eta_sigma_u.exp();
    let sv = eta.eta_sigma_v.exp();
    let r = rho_from_eta(eta.eta_rho);
    let zu = (y[0] - eta.eta_mu_u) / su;
    let zv = (y[1] - eta.eta_mu_v) / sv;
    let omr = 1.0 - r * r;
    let a = zu * zu - 2.0 * r * zu * zv + zv * zv;
    let nll = LN_2PI + eta.eta_sigma_u + eta.eta_sigma_v + 0.5 * omr.ln() + 0.5 * a / omr;

    let g_mu_u = -(zu - r * zv) / (omr * su);
    let g_mu_v = -(zv - r * zu) / (omr * sv);
    let g_s_u = 1.0 - (zu * zu - r * zu * zv) / omr;
    let g_s_v = 1.0 - (zv * zv - r * zu * zv) / omr;
    let d_rho = -r / omr - zu * zv / omr + r * a / (omr * omr);
    let g_rho = d_rho * omr * omr.sqrt();
    (nll, [g_mu_u, g_mu_v, g_s_u, g_s_v, g_rho])
}

pub fn nll_gradient(eta: &PredictorVector, y: [f64; 2]) -> Result<PredictorVector> {
    eta.validate()?;
    ensure_finite("y_u", y[0])?;
    ensure_finite("y_v", y[1])?;
    Ok(PredictorVector::from_array(nll_and_gradient(eta, y).1))
}

/// Negative log-density at `y` as a function of the predictors.
#[inline]
pub fn nll(eta: &PredictorVector, y: [f64; 2]) -> f64 {
    -link_to_params_unchecked(eta).logpdf_unchecked(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn std_params(rho: f64) -> BivNormalParams {
        BivNormalParams::new(0.0, 0.0, 1.0, 1.0, rho).unwrap()
    }

    #[test]
    fn link_examples() {
        let p = link_to_params(&PredictorVector::default()).unwrap();
        assert_eq!(p.sigma_u, 1.0);
        assert_eq!(p.rho, 0.0);
        let p = link_to_params(&PredictorVector { eta_rho: 1.0, ..Default::default() }).unwrap();
        assert!((p.rho - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let p = link_to_params(&PredictorVector { eta_rho: -3.0, ..Default::default() }).unwrap();
        assert!((p.rho + 3.0 / 10f64.sqrt()).abs() < 1e-15);
        assert!((p.rho + 0.948_683).abs() < 1e-6);
    }

    #[test]
    fn link_rejects_non_finite() {
        let eta = PredictorVector { eta_mu_u: f64::NAN, ..Default::default() };
        assert!(matches!(link_to_params(&eta), Err(Error::InvalidArgument(_))));
        let eta = PredictorVector { eta_rho: f64::INFINITY, ..Default::default() };
        assert!(link_to_params(&eta).is_err());
    }

    #[test]
    fn rho_is_clamped_at_the_boundary() {
        let p = link_to_params(&PredictorVector { eta_rho: 1e12, ..Default::default() }).unwrap();
        assert_eq!(p.rho, RHO_BOUND);
        assert!(p.det() > 0.0);
    }

    #[test]
    fn logpdf_examples() {
        let lp = std_params(0.0).logpdf([0.0, 0.0]).unwrap();
        assert!((lp + 1.837_877).abs() < 1e-6);
        let lp = std_params(0.5).logpdf([0.0, 0.0]).unwrap();
        assert!((lp - (-LN_2PI - 0.5 * 0.75f64.ln())).abs() < 1e-14);
        assert!((lp + 1.694_036).abs() < 1e-6);
        let lp = std_params(0.0).logpdf([1.0, 0.0]).unwrap();
        assert!((lp + 2.337_877).abs() < 1e-6);
    }

    #[test]
    fn logpdf_rejects_invalid_params() {
        let p = BivNormalParams { sigma_u: -1.0, ..BivNormalParams::standard() };
        assert!(p.logpdf([0.0, 0.0]).is_err());
        let p = BivNormalParams { rho: 1.0, ..BivNormalParams::standard() };
        assert!(p.logpdf([0.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let eta = PredictorVector::default();
        let g = nll_gradient(&eta, [0.0, 0.0]).unwrap();
        assert_eq!(g.eta_mu_u, 0.0);
        assert!((g.eta_sigma_u - 1.0).abs() < 1e-15);
        // Finite-difference check of the same derivative.
        let h = 1e-5;
        let f = |s: f64| nll(&PredictorVector { eta_sigma_u: s, ..eta }, [0.0, 0.0]);
        assert!(((f(h) - f(-h)) / (2.0 * h) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        let mut rng = rng::stream(11, &[1]);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let eta = PredictorVector::from_array([
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-2.0..2.0),
            ]);
            let y = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let g = nll_gradient(&eta, y).unwrap().to_array();
            for k in 0..5 {
                let mut up = eta.to_array();
                let mut dn = eta.to_array();
                up[k] += h;
                dn[k] -= h;
                let fd = (nll(&PredictorVector::from_array(up), y)
                    - nll(&PredictorVector::from_array(dn), y))
                    / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn density_integrates_to_one() {
        use rand::Rng;
        let mut rng = rng::stream(12, &[]);
        for _ in 0..20 {
            let p = BivNormalParams::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.3..3.0),
                rng.random_range(0.3..3.0),
                rng.random_range(-0.9..0.9),
            )
            .unwrap();
            let m = 400;
            let (lo_u, hi_u) = (p.mu_u - 8.0 * p.sigma_u, p.mu_u + 8.0 * p.sigma_u);
            let (lo_v, hi_v) = (p.mu_v - 8.0 * p.sigma_v, p.mu_v + 8.0 * p.sigma_v);
            let (du, dv) = ((hi_u - lo_u) / m as f64, (hi_v - lo_v) / m as f64);
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let y = [lo_u + (i as f64 + 0.5) * du, lo_v + (j as f64 + 0.5) * dv];
                    total += p.logpdf_unchecked(y).exp();
                }
            }
            total *= du * dv;
            assert!((total - 1.0).abs() < 1e-3, "{total}");
        }
    }

    #[test]
    fn logpdf_is_maximized_at_the_mean() {
        let p = BivNormalParams::new(1.5, -0.5, 0.7, 2.0, -0.6).unwrap();
        let at_mean = p.logpdf_unchecked([p.mu_u, p.mu_v]);
        for i in -20..=20 {
            for j in -20..=20 {
                let y = [p.mu_u + 0.1 * i as f64, p.mu_v + 0.1 * j as f64];
                assert!(p.logpdf_unchecked(y) <= at_mean);
            }
        }
    }

    #[test]
    fn sample_moments() {
        let n = 1_000_000;
        let p = std_params(0.0);
        let s = p.sample(n, &mut rng::stream(3, &[])).unwrap();
        let mu = [
            s.iter().map(|x| x[0]).sum::<f64>() / n as f64,
            s.iter().map(|x| x[1]).sum::<f64>() / n as f64,
        ];
        assert!(mu[0].abs() < 4e-3 && mu[1].abs() < 4e-3, "{mu:?}");
    }

    #[test]
    fn sample_covariance_converges() {
        let n = 200_000;
        let p = BivNormalParams::new(1.0, -2.0, 1.0, 0.8, 0.7).unwrap();
        let s = p.sample(n, &mut rng::stream(4, &[])).unwrap();
        let m = [
            s.iter().map(|x| x[0]).sum::<f64>() / n as f64,
            s.iter().map(|x| x[1]).sum::<f64>() / n as f64,
        ];
        let mut c = [[0.0; 2]; 2];
        for x in &s {
            let d = [x[0] - m[0], x[1] - m[1]];
            for a in 0..2 {
                for b in 0..2 {
                    c[a][b] += d[a] * d[b] / (n - 1) as f64;
                }
            }
        }
        let sigma = p.covariance();
        let frob: f64 = (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| (c[a][b] - sigma[a][b]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(frob < 5.0 / (n as f64).sqrt(), "frobenius {frob}");
    }

    #[test]
    fn near_perfect_correlation_sample() {
        let p = std_params(1.0 - 1e-9);
        let s = p.sample(10_000, &mut rng::stream(5, &[])).unwrap();
        let n = s.len() as f64;
        let (mu, mv) = (s.iter().map(|x| x[0]).sum::<f64>() / n, s.iter().map(|x| x[1]).sum::<f64>() / n);
        let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
        for x in &s {
            suv += (x[0] - mu) * (x[1] - mv);
            suu += (x[0] - mu).powi(2);
            svv += (x[1] - mv).powi(2);
        }
        assert!(suv / (suu * svv).sqrt() > 0.999);
    }

    #[test]
    fn sampling_is_deterministic_and_rejects_zero() {
        let p = std_params(0.3);
        let a = p.sample(50, &mut rng::stream(9, &[1])).unwrap();
        let b = p.sample(50, &mut rng::stream(9, &[1])).unwrap();
        assert_eq!(a, b);
        assert!(p.sample(0, &mut rng::stream(9, &[1])).is_err());
    }

    proptest! {
        #[test]
        fn link_round_trip(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -5.0f64..5.0,
                           d in -5.0f64..5.0, e in -50.0f64..50.0) {
            let eta = PredictorVector::from_array([a, b, c, d, e]);
            let back = params_to_link(&link_to_params(&eta).unwrap()).to_array();
            for (x, y) in eta.to_array().iter().zip(back) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}

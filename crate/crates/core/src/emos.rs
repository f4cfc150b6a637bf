//! IND-EMOS and BIV-EMOS: bivariate Gaussian regression on ensemble summary
//! statistics with fixed linear predictors, fitted by maximum likelihood.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::CovariateVector;
use crate::error::{Error, Result};
use crate::gaussian::{link_to_params, nll_and_gradient, BivNormalParams, PredictorVector};
use crate::optim::{bfgs, BfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmosVariant {
    #[serde(rename = "ind-emos")]
    Ind,
    #[serde(rename = "biv-emos")]
    Biv,
}

impl EmosVariant {
    pub fn tag(self) -> &'static str {
        match self {
            EmosVariant::Ind => "ind-emos",
            EmosVariant::Biv => "biv-emos",
        }
    }

    pub fn n_coefficients(self) -> usize {
        match self {
            EmosVariant::Ind => 10,
            EmosVariant::Biv => 13,
        }
    }

    pub fn names(self) -> Vec<String> {
        let mut n: Vec<String> = [
            "mu_u.intercept",
            "mu_u.mean_u",
            "mu_u.ctrl_u",
            "mu_v.intercept",
            "mu_v.mean_v",
            "mu_v.ctrl_v",
            "sigma_u.intercept",
            "sigma_u.sd_u",
            "sigma_v.intercept",
            "sigma_v.sd_v",
            "rho.intercept",
            "rho.mean_wdir_x_mean_wspd",
            "rho.ctrl_wdir_x_ctrl_wspd",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        n.truncate(self.n_coefficients());
        n
    }
}

impl fmt::Display for EmosVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EmosVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ind-emos" | "ind" => Ok(EmosVariant::Ind),
            "biv-emos" | "biv" => Ok(EmosVariant::Biv),
            _ => Err(Error::Config(format!("unknown EMOS variant '{s}'"))),
        }
    }
}

/// Layout: mu_u (3), mu_v (3), sigma_u (2), sigma_v (2), then rho (3) for
/// BIV only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosCoefficients {
    pub variant: EmosVariant,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl EmosCoefficients {
    pub fn new(variant: EmosVariant, values: Vec<f64>) -> Result<Self> {
        let c = Self {
            variant,
            names: variant.names(),
            values,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn zeros(variant: EmosVariant) -> Self {
        Self {
            variant,
            names: variant.names(),
            values: vec![0.0; variant.n_coefficients()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.variant.n_coefficients() || self.names != self.variant.names() {
            return Err(Error::Schema(format!(
                "{} needs coefficients {:?}",
                self.variant,
                self.variant.names()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("coefficient {} is not finite", self.names[i])));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Design row: the non-intercept regressors of each predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmosDesign {
    pub mu_u: [f64; 2],
    pub mu_v: [f64; 2],
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub rho: [f64; 2],
}

impl EmosDesign {
    pub fn from_covariates(cov: &CovariateVector) -> Result<Self> {
        let g = |n: &str| cov.get(n);
        Ok(Self {
            mu_u: [g("mean_u")?, g("ctrl_u")?],
            mu_v: [g("mean_v")?, g("ctrl_v")?],
            sigma_u: g("sd_u")?,
            sigma_v: g("sd_v")?,
            rho: [g("mean_wdir")? * g("mean_wspd")?, g("ctrl_wdir")? * g("ctrl_wspd")?],
        })
    }

    /// Regressors in coefficient order, with a leading 1 per predictor.
    fn columns(&self) -> [f64; 13] {
        [
            1.0,
            self.mu_u[0],
            self.mu_u[1],
            1.0,
            self.mu_v[0],
            self.mu_v[1],
            1.0,
            self.sigma_u,
            1.0,
            self.sigma_v,
            1.0,
            self.rho[0],
            self.rho[1],
        ]
    }
}

/// Predictor index of each coefficient.
const PREDICTOR_OF: [usize; 13] = [0, 0, 0, 1, 1, 1, 2, 2, 3, 3, 4, 4, 4];
const INTERCEPTS: [usize; 5] = [0, 3, 6, 8, 10];

fn predictors(values: &[f64], x: &[f64; 13]) -> PredictorVector {
    let mut eta = [0.0; 5];
    for (k, (&a, &xk)) in values.iter().zip(x).enumerate() {
        eta[PREDICTOR_OF[k]] += a * xk;
    }
    PredictorVector::from_array(eta)
}

pub fn emos_predict_design(coef: &EmosCoefficients, x: &EmosDesign) -> Result<BivNormalParams> {
    coef.validate()?;
    link_to_params(&predictors(&coef.values, &x.columns()))
}

pub fn emos_predict(coef: &EmosCoefficients, cov: &CovariateVector) -> Result<BivNormalParams> {
    emos_predict_design(coef, &EmosDesign::from_covariates(cov)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosFit {
    pub coefficients: EmosCoefficients,
    /// Mean training negative log-likelihood at the returned coefficients.
    pub nll: f64,
    /// Mean training negative log-likelihood at the initial coefficients.
    pub nll_start: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_days: usize,
}

pub const MIN_TRAIN_DAYS: usize = 50;

/// Maximum-likelihood fit.
///
/// The optimizer works on centred and scaled regressors; coefficients are
/// mapped back to the raw covariate scale afterwards.
pub fn emos_fit(design: &[EmosDesign], y: &[[f64; 2]], variant: EmosVariant) -> Result<EmosFit> {
    emos_fit_with(design, y, variant, &BfgsOptions::default())
}

pub fn emos_fit_with(design: &[EmosDesign], y: &[[f64; 2]], variant: EmosVariant, opts: &BfgsOptions) -> Result<EmosFit> {
    let n = design.len();
    if n != y.len() {
        return Err(Error::invalid("design and responses differ in length"));
    }
    if n < MIN_TRAIN_DAYS {
        return Err(Error::invalid(format!("EMOS needs at least {MIN_TRAIN_DAYS} training days, got {n}")));
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response in EMOS training data"));
    }
    let p = variant.n_coefficients();
    let raw: Vec<[f64; 13]> = design.iter().map(|d| d.columns()).collect();
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite covariate in EMOS training data"));
    }
    let nf = n as f64;
    let mut center = [0.0; 13];
    let mut scale = [1.0; 13];
    for k in 0..p {
        if INTERCEPTS.contains(&k) {
            continue;
        }
        let m = raw.iter().map(|r| r[k]).sum::<f64>() / nf;
        let s = (raw.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / nf).sqrt();
        center[k] = m;
        // A constant column keeps unit scale; it stays collinear with the
        // intercept, which the optimizer tolerates.
        scale[k] = if s > 0.0 { s } else { 1.0 };
    }
    let z: Vec<[f64; 13]> = raw
        .iter()
        .map(|r| {
            let mut out = *r;
            for k in 0..13 {
                if !INTERCEPTS.contains(&k) {
                    out[k] = (r[k] - center[k]) / scale[k];
                }
            }
            out
        })
        .collect();

    // Start: location at the response mean with unit weight on the ensemble
    // mean, scale at the spread of the resulting residuals.
    let mut beta0 = vec![0.0; p];
    for (c, ax) in [(0usize, 0usize), (3, 1)] {
        let slope = scale[c + 1];
        beta0[c] = y.iter().map(|yy| yy[ax]).sum::<f64>() / nf;
        beta0[c + 1] = slope;
        let resid: Vec<f64> = y
            .iter()
            .zip(&z)
            .map(|(yy, zz)| yy[ax] - beta0[c] - slope * zz[c + 1])
            .collect();
        let rm = resid.iter().sum::<f64>() / nf;
        let sd = (resid.iter().map(|r| (r - rm).powi(2)).sum::<f64>() / nf).sqrt();
        beta0[if ax == 0 { 6 } else { 8 }] = sd.max(1e-8).ln();
    }

    let objective = |beta: &[f64], grad: &mut [f64]| -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut f = 0.0;
        for (zz, yy) in z.iter().zip(y) {
            let eta = predictors(beta, zz);
            let (l, g) = nll_and_gradient(&eta, *yy);
            f += l;
            for k in 0..p {
                grad[k] += g[PREDICTOR_OF[k]] * zz[k];
            }
        }
        grad.iter_mut().for_each(|g| *g /= nf);
        f / nf
    };
    let mut scratch = vec![0.0; p];
    let mut obj = objective;
    let nll_start = obj(&beta0, &mut scratch);
    let m = bfgs(&mut obj, &beta0, opts);

    let to_raw = |beta: &[f64]| {
        let mut alpha = beta.to_vec();
        for k in 0..p {
            if !INTERCEPTS.contains(&k) {
                alpha[k] = beta[k] / scale[k];
                alpha[INTERCEPTS[PREDICTOR_OF[k]]] -= beta[k] * center[k] / scale[k];
            }
        }
        alpha
    };
    if !m.converged && m.iterations >= opts.max_iter {
        return Err(Error::FitFailure {
            message: format!(
                "{variant} did not converge in {} iterations (gradient norm {:e})",
                opts.max_iter, m.grad_norm
            ),
            last_iterate: Some(to_raw(&m.x)),
        });
    }
    if !m.f.is_finite() {
        return Err(Error::FitFailure {
            message: format!("{variant} likelihood is not finite"),
            last_iterate: Some(to_raw(&m.x)),
        });
    }
    if !m.converged {
        log::warn!(
            "{variant}: line search stalled after {} iterations (gradient norm {:e})",
            m.iterations,
            m.grad_norm
        );
    }
    Ok(EmosFit {
        coefficients: EmosCoefficients::new(variant, to_raw(&m.x))?,
        nll: m.f,
        nll_start,
        converged: m.converged,
        iterations: m.iterations,
        n_days: n,
    })
}

/// Mean negative log-likelihood of a coefficient set over a data set.
pub fn emos_mean_nll(coef: &EmosCoefficients, design: &[EmosDesign], y: &[[f64; 2]]) -> Result<f64> {
    let mut s = 0.0;
    for (d, yy) in design.iter().zip(y) {
        s -= emos_predict_design(coef, d)?.logpdf(*yy)?;
    }
    Ok(s / design.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CovariateSet, C_NAMES};
    use proptest::prelude::*;

    fn cov(pairs: &[(&str, f64)]) -> CovariateVector {
        let mut v = vec![0.0; C_NAMES.len()];
        for (n, x) in pairs {
            v[C_NAMES.iter().position(|c| c == n).unwrap()] = *x;
        }
        CovariateVector::new(CovariateSet::C, v).unwrap()
    }

    #[test]
    fn zero_coefficients_give_standard_normal() {
        let p = emos_predict(&EmosCoefficients::zeros(EmosVariant::Biv), &cov(&[("mean_u", 3.0)])).unwrap();
        assert_eq!(p, BivNormalParams::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap());
    }

    #[test]
    fn ind_variant_has_zero_correlation() {
        assert!(EmosCoefficients::new(EmosVariant::Ind, vec![0.1; 13]).is_err());
        let c = EmosCoefficients::new(EmosVariant::Ind, vec![0.1, 1.0, 0.2, -0.3, 0.9, 0.1, 0.2, 0.5, 0.1, 0.4]).unwrap();
        let p = emos_predict(&c, &cov(&[("mean_wdir", 200.0), ("mean_wspd", 5.0)])).unwrap();
        assert_eq!(p.rho, 0.0);
    }

    #[test]
    fn single_active_term() {
        let mut c = EmosCoefficients::zeros(EmosVariant::Biv);
        c.values[1] = 1.0;
        let p = emos_predict(&c, &cov(&[("mean_u", 2.5)])).unwrap();
        assert_eq!(p.mu_u, 2.5);
    }

    #[test]
    fn missing_covariate_is_schema_error() {
        let v = CovariateVector::new(CovariateSet::CPlus, vec![0.0; 15]).unwrap();
        assert!(matches!(
            emos_predict(&EmosCoefficients::zeros(EmosVariant::Biv), &v),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn too_few_days() {
        let d = vec![EmosDesign::from_covariates(&cov(&[])).unwrap(); 10];
        assert!(emos_fit(&d, &[[0.0, 0.0]; 10], EmosVariant::Ind).is_err());
    }

    proptest! {
        #[test]
        fn location_is_linear_in_each_covariate(
            a in proptest::collection::vec(-2.0f64..2.0, 13),
            x in -10.0f64..10.0,
            h in 0.1f64..3.0,
        ) {
            let c = EmosCoefficients::new(EmosVariant::Biv, a).unwrap();
            for name in ["mean_u", "ctrl_u", "mean_v", "ctrl_v"] {
                let at = |t: f64| {
                    let p = emos_predict(&c, &cov(&[(name, t), ("sd_u", 0.1), ("sd_v", -0.2)])).unwrap();
                    [p.mu_u, p.mu_v]
                };
                let (m, c0, p) = (at(x - h), at(x), at(x + h));
                for k in 0..2 {
                    let second = p[k] - 2.0 * c0[k] + m[k];
                    prop_assert!(second.abs() < 1e-9 * (1.0 + c0[k].abs()));
                }
            }
        }
    }
}

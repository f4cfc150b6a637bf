//! Unrotated kernels of the parametric families.
//!
//! Conventions: `h1(u, v) = P(V <= v | U = u)`, `h2(u, v) = P(U <= u | V = v)`,
//! `hinv1(p, u)` solves `h1(u, v) = p` for v, `hinv2(p, v)` solves
//! `h2(u, v) = p` for u. All parametric families here are exchangeable, so
//! `h1(u, v) = h2(v, u)`.

use crate::special::{norm_cdf, norm_quantile, solve_monotone, t_cdf, t_quantile};
use statrs::function::gamma::ln_gamma;

/// Parameters of one unrotated parametric family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Param {
    Indep,
    Gauss(f64),
    T { rho: f64, nu: f64 },
    Clayton(f64),
    Gumbel(f64),
    Frank(f64),
    Joe(f64),
}

const HINV_TOL: f64 = 1e-15;

impl Param {
    pub fn ln_pdf(self, u: f64, v: f64) -> f64 {
        match self {
            Param::Indep => 0.0,
            Param::Gauss(r) => gauss_ln_pdf_scores(r, norm_quantile(u), norm_quantile(v)),
            Param::T { rho, nu } => TConst::new(rho, nu).ln_pdf(t_quantile(u, nu), t_quantile(v, nu)),
            Param::Clayton(th) => {
                let s = u.powf(-th) + v.powf(-th) - 1.0;
                (1.0 + th).ln() - (1.0 + th) * (u.ln() + v.ln()) - (2.0 + 1.0 / th) * s.ln()
            }
            Param::Gumbel(th) => {
                let (x, y) = (-u.ln(), -v.ln());
                let a = (x.powf(th) + y.powf(th)).powf(1.0 / th);
                -a + x + y + (th - 1.0) * (x.ln() + y.ln()) + (1.0 - 2.0 * th) * a.ln() + (a + th - 1.0).ln()
            }
            Param::Frank(th) => {
                let d = -(-th).exp_m1();
                let den = d - (-th * u).exp_m1() * (-th * v).exp_m1();
                (th * d).ln() - th * (u + v) - 2.0 * den.abs().ln()
            }
            Param::Joe(th) => {
                let (a, b) = ((1.0 - u).powf(th), (1.0 - v).powf(th));
                let s = a + b - a * b;
                (1.0 / th - 2.0) * s.ln() + (th - 1.0) * ((1.0 - u).ln() + (1.0 - v).ln()) + (th - 1.0 + s).ln()
            }
        }
    }

    /// P(U <= u | V = v).
    pub fn h2(self, u: f64, v: f64) -> f64 {
        match self {
            Param::Indep => u,
            Param::Gauss(r) => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                norm_cdf((x - r * y) / (1.0 - r * r).sqrt())
            }
            Param::T { rho, nu } => {
                let (x, y) = (t_quantile(u, nu), t_quantile(v, nu));
                let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
                t_cdf((x - rho * y) / scale, nu + 1.0)
            }
            Param::Clayton(th) => {
                let s = u.powf(-th) + v.powf(-th) - 1.0;
                // v^{-th-1} s^{-1-1/th}, evaluated in logs to avoid overflow.
                ((-th - 1.0) * v.ln() + (-1.0 - 1.0 / th) * s.ln()).exp()
            }
            Param::Gumbel(th) => {
                let (x, y) = (-u.ln(), -v.ln());
                let sum = x.powf(th) + y.powf(th);
                let a = sum.powf(1.0 / th);
                (-a + (1.0 / th - 1.0) * sum.ln() + (th - 1.0) * y.ln() + y).exp()
            }
            Param::Frank(th) => {
                let (a, b, d) = ((-th * u).exp_m1(), (-th * v).exp_m1(), (-th).exp_m1());
                a * (-th * v).exp() / (d + a * b)
            }
            Param::Joe(th) => {
                let (a, b) = ((1.0 - u).powf(th), (1.0 - v).powf(th));
                let s = a + b - a * b;
                ((1.0 / th - 1.0) * s.ln() + (th - 1.0) * (1.0 - v).ln()).exp() * (1.0 - a)
            }
        }
    }

    /// Solves `h2(u, v) = p` for u.
    pub fn hinv2(self, p: f64, v: f64) -> f64 {
        match self {
            Param::Indep => p,
            Param::Gauss(r) => {
                let y = norm_quantile(v);
                norm_cdf(norm_quantile(p) * (1.0 - r * r).sqrt() + r * y)
            }
            Param::T { rho, nu } => {
                let y = t_quantile(v, nu);
                let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
                t_cdf(t_quantile(p, nu + 1.0) * scale + rho * y, nu)
            }
            Param::Clayton(th) => {
                // p v^{th+1} = s^{-1-1/th}  =>  s = (p v^{th+1})^{-th/(th+1)}.
                let ln_s = -th / (th + 1.0) * (p.ln() + (th + 1.0) * v.ln());
                let s = ln_s.exp();
                (s - v.powf(-th) + 1.0).powf(-1.0 / th)
            }
            Param::Frank(th) => {
                let (b, d) = ((-th * v).exp_m1(), (-th).exp_m1());
                let a = p * d / ((-th * v).exp() - p * b);
                -(a.ln_1p()) / th
            }
            Param::Gumbel(_) | Param::Joe(_) => self.numeric_hinv2(p, v),
        }
    }

    fn numeric_hinv2(self, p: f64, v: f64) -> f64 {
        solve_monotone(
            |u| {
                let u = u.clamp(1e-300, 1.0 - 1e-16);
                (self.h2(u, v), self.ln_pdf(u, v).exp())
            },
            p,
            0.0,
            1.0,
            HINV_TOL,
        )
    }

    /// Kendall's tau implied by the parameter.
    pub fn tau(self) -> f64 {
        match self {
            Param::Indep => 0.0,
            Param::Gauss(r) | Param::T { rho: r, .. } => std::f64::consts::FRAC_2_PI * r.asin(),
            Param::Clayton(th) => th / (th + 2.0),
            Param::Gumbel(th) => 1.0 - 1.0 / th,
            Param::Frank(th) => frank_tau(th),
            Param::Joe(th) => joe_tau(th),
        }
    }
}

/// Debye-function form: tau = 1 - 4/theta + 4 D1(theta)/theta.
pub(crate) fn frank_tau(th: f64) -> f64 {
    if th.abs() < 1e-8 {
        return th / 9.0;
    }
    let a = th.abs();
    let d1 = crate::special::integrate(|t| if t == 0.0 { 1.0 } else { t / t.exp_m1() }, 0.0, a, 16, 16) / a;
    let tau = 1.0 - 4.0 / a + 4.0 * d1 / a;
    tau.copysign(th)
}

/// Series form: tau = 1 - 4 sum_k 1 / (k (theta k + 2) (theta (k - 1) + 2)).
pub(crate) fn joe_tau(th: f64) -> f64 {
    let mut s = 0.0;
    for k in (1..=20_000).rev() {
        let k = k as f64;
        s += 1.0 / (k * (th * k + 2.0) * (th * (k - 1.0) + 2.0));
    }
    1.0 - 4.0 * s
}

/// Per-parameter constants of the t copula density.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TConst {
    rho: f64,
    nu: f64,
    ln_norm2: f64,
    ln_norm1: f64,
}

impl TConst {
    pub fn new(rho: f64, nu: f64) -> Self {
        let ln_norm2 = ln_gamma(0.5 * (nu + 2.0))
            - ln_gamma(0.5 * nu)
            - (nu * std::f64::consts::PI).ln()
            - 0.5 * (1.0 - rho * rho).ln();
        let ln_norm1 = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
        Self {
            rho,
            nu,
            ln_norm2,
            ln_norm1,
        }
    }

    /// Log-density at t-quantile scale arguments.
    pub fn ln_pdf(&self, x: f64, y: f64) -> f64 {
        let (r, nu) = (self.rho, self.nu);
        let q = (x * x - 2.0 * r * x * y + y * y) / (nu * (1.0 - r * r));
        let margins = 2.0 * self.ln_norm1 - 0.5 * (nu + 1.0) * ((x * x / nu).ln_1p() + (y * y / nu).ln_1p());
        self.ln_norm2 - 0.5 * (nu + 2.0) * q.ln_1p() - margins
    }
}

/// Gaussian copula log-density at normal-score arguments.
pub(crate) fn gauss_ln_pdf_scores(r: f64, x: f64, y: f64) -> f64 {
    let omr = 1.0 - r * r;
    -0.5 * omr.ln() - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * omr)
}

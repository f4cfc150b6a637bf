//! Maximum-likelihood pair-copula fitting with BIC family selection.

use std::cell::RefCell;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bernstein::BernsteinGrid;
use super::families::{frank_tau, gauss_ln_pdf_scores, joe_tau, Param, TConst};
use super::{clamp01, Family, PairCopula, Rotation};
use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};
use crate::special::{bisect_monotone, brent_minimize, norm_cdf, norm_quantile, t_ln_pdf, t_quantile};

/// Family menus of the three Y-vine variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyMenu {
    /// Gaussian pair copulas only.
    G,
    /// Independence plus the six parametric families.
    P,
    /// The parametric menu plus the Bernstein copula.
    #[serde(rename = "ALL")]
    All,
}

impl FamilyMenu {
    pub fn families(self) -> &'static [Family] {
        match self {
            FamilyMenu::G => &[Family::Gaussian],
            FamilyMenu::P => &[
                Family::Independence,
                Family::Gaussian,
                Family::StudentT,
                Family::Clayton,
                Family::Gumbel,
                Family::Frank,
                Family::Joe,
            ],
            FamilyMenu::All => &Family::ALL,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            FamilyMenu::G => "G",
            FamilyMenu::P => "P",
            FamilyMenu::All => "ALL",
        }
    }
}

impl FromStr for FamilyMenu {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G" | "g" => Ok(FamilyMenu::G),
            "P" | "p" => Ok(FamilyMenu::P),
            "ALL" | "all" => Ok(FamilyMenu::All),
            other => Err(Error::Config(format!("unknown family menu '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub min_obs: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { min_obs: 20 }
    }
}

pub(crate) const RHO_MAX: f64 = 0.999;
pub(crate) const NU_MIN: f64 = 2.01;
pub(crate) const NU_MAX: f64 = 50.0;
pub(crate) const CLAYTON_MIN: f64 = 1e-4;
pub(crate) const CLAYTON_MAX: f64 = 28.0;
pub(crate) const GUMBEL_MAX: f64 = 17.0;
pub(crate) const FRANK_MIN: f64 = 1e-4;
pub(crate) const FRANK_MAX: f64 = 35.0;
pub(crate) const JOE_MAX: f64 = 30.0;

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let n0 = (n as f64) * (n as f64 - 1.0) / 2.0;

    let (mut n1, mut n3) = (0.0, 0.0);
    let (mut run_x, mut run_xy) = (1.0f64, 1.0f64);
    for k in 1..n {
        let (a, b) = (idx[k - 1], idx[k]);
        if x[a] == x[b] {
            run_x += 1.0;
            if y[a] == y[b] {
                run_xy += 1.0;
            } else {
                n3 += run_xy * (run_xy - 1.0) / 2.0;
                run_xy = 1.0;
            }
        } else {
            n1 += run_x * (run_x - 1.0) / 2.0;
            n3 += run_xy * (run_xy - 1.0) / 2.0;
            run_x = 1.0;
            run_xy = 1.0;
        }
    }
    n1 += run_x * (run_x - 1.0) / 2.0;
    n3 += run_xy * (run_xy - 1.0) / 2.0;

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut n2 = 0.0;
    let mut run = 1.0f64;
    for k in 1..n {
        if ys[k] == ys[k - 1] {
            run += 1.0;
        } else {
            n2 += run * (run - 1.0) / 2.0;
            run = 1.0;
        }
    }
    n2 += run * (run - 1.0) / 2.0;

    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (n0 - n1 - n2 + n3 - 2.0 * swaps as f64) / denom
}

fn merge_count(a: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = a.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut s = {
        let (l, r) = a.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if a[j] < a[i] {
            buf[k] = a[j];
            s += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = a[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&a[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&a[j..n]);
    a.copy_from_slice(&buf[..n]);
    s
}

/// Direct O(n^2) tau-b, kept as a reference implementation.
pub fn kendall_tau_naive(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (mut s, mut tx, mut ty) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
            let b = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
            s += a * b;
            tx += a * a;
            ty += b * b;
        }
    }
    if tx == 0.0 || ty == 0.0 {
        0.0
    } else {
        s / (tx * ty).sqrt()
    }
}

/// Parameter of a one-parameter family with Kendall's tau `tau` (>= 0 for
/// the tail-asymmetric families, which are rotated for negative tau).
pub(crate) fn tau_to_param(family: Family, tau: f64) -> Option<f64> {
    let t = tau.clamp(-0.99, 0.99);
    match family {
        Family::Gaussian | Family::StudentT => Some((std::f64::consts::FRAC_PI_2 * t).sin().clamp(-RHO_MAX, RHO_MAX)),
        Family::Clayton => Some((2.0 * t.abs() / (1.0 - t.abs())).clamp(CLAYTON_MIN, CLAYTON_MAX)),
        Family::Gumbel => Some((1.0 / (1.0 - t.abs())).clamp(1.0, GUMBEL_MAX)),
        Family::Joe => Some(bisect_monotone(joe_tau, t.abs(), 1.0, JOE_MAX, 1e-10)),
        Family::Frank => {
            let th = bisect_monotone(frank_tau, t, -FRANK_MAX, FRANK_MAX, 1e-10);
            Some(if th.abs() < FRANK_MIN { FRANK_MIN.copysign(t) } else { th })
        }
        Family::Independence | Family::Bernstein => None,
    }
}

/// Rotations tried for a family given the sign of the sample tau.
fn rotations(family: Family, tau: f64) -> &'static [Rotation] {
    if family.is_asymmetric_tail() {
        if tau >= 0.0 {
            &[Rotation::R0, Rotation::R180]
        } else {
            &[Rotation::R90, Rotation::R270]
        }
    } else {
        &[Rotation::R0]
    }
}

fn rotate(rot: Rotation, u: f64, v: f64) -> (f64, f64) {
    match rot {
        Rotation::R0 => (u, v),
        Rotation::R90 => (1.0 - u, v),
        Rotation::R180 => (1.0 - u, 1.0 - v),
        Rotation::R270 => (u, 1.0 - v),
    }
}

fn sum_finite(it: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    for x in it {
        if !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        s += x;
    }
    s
}

/// Maximizes a scalar log-likelihood on `[lo, hi]`, keeping the tau-inversion
/// start when Brent's search does not improve on it.
fn maximize_1d<F: FnMut(f64) -> f64>(mut ll: F, lo: f64, hi: f64, start: f64, xtol: f64) -> (f64, f64) {
    let ll_start = ll(start);
    let (x, neg) = brent_minimize(
        |t| {
            let v = ll(t);
            if v.is_finite() {
                -v
            } else {
                f64::MAX
            }
        },
        lo,
        hi,
        xtol,
    );
    if ll_start.is_finite() && ll_start >= -neg {
        (start, ll_start)
    } else {
        (x, -neg)
    }
}

struct Data<'a> {
    u: &'a [f64],
    v: &'a [f64],
    tau: f64,
    gauss_scores: Option<(Vec<f64>, Vec<f64>)>,
}

impl Data<'_> {
    fn normal_scores(&mut self) -> (&[f64], &[f64]) {
        let (u, v) = (self.u, self.v);
        let (x, y) = self.gauss_scores.get_or_insert_with(|| {
            (
                u.iter().map(|&a| norm_quantile(a)).collect(),
                v.iter().map(|&b| norm_quantile(b)).collect(),
            )
        });
        (x, y)
    }
}

fn fit_gaussian(d: &mut Data) -> (Vec<f64>, f64) {
    let start = tau_to_param(Family::Gaussian, d.tau).unwrap();
    let (x, y) = d.normal_scores();
    let (r, ll) = maximize_1d(
        |r| sum_finite(x.iter().zip(y.iter()).map(|(&a, &b)| gauss_ln_pdf_scores(r, a, b))),
        -RHO_MAX,
        RHO_MAX,
        start,
        1e-9,
    );
    (vec![r], ll)
}

fn t_loglik(u: &[f64], v: &[f64], rho: f64, nu: f64) -> f64 {
    let k = TConst::new(rho, nu);
    sum_finite(u.iter().zip(v).map(|(&a, &b)| k.ln_pdf(t_quantile(a, nu), t_quantile(b, nu))))
}

const T_TABLE_NODES: usize = 257;

/// `x(z) = T_nu^{-1}(Phi(z))` on a cubic Hermite grid spanning both score
/// vectors. Used only while searching; the reported log-likelihood is exact.
fn t_scores_interpolated(zu: &[f64], zv: &[f64], nu: f64) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = zu
        .iter()
        .chain(zv)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let exact = |z: &[f64]| z.iter().map(|&x| t_quantile(norm_cdf(x), nu)).collect::<Vec<_>>();
    if !(hi > lo) {
        return (exact(zu), exact(zv));
    }
    let h = (hi - lo) / (T_TABLE_NODES - 1) as f64;
    let nodes: Vec<(f64, f64)> = (0..T_TABLE_NODES)
        .map(|k| {
            let zk = lo + k as f64 * h;
            // x is odd in z; evaluate in the lower tail for accuracy.
            let xl = t_quantile(norm_cdf(-zk.abs()), nu);
            let x = if zk > 0.0 { -xl } else { xl };
            let ln_phi = -0.5 * zk * zk - 0.5 * (2.0 * std::f64::consts::PI).ln();
            (x, (ln_phi - t_ln_pdf(x, nu)).exp())
        })
        .collect();
    let eval = |z: &[f64]| {
        z.iter()
            .map(|&x| {
                let s = ((x - lo) / h).clamp(0.0, (T_TABLE_NODES - 1) as f64);
                let k = (s.floor() as usize).min(T_TABLE_NODES - 2);
                let t = s - k as f64;
                let ((y0, d0), (y1, d1)) = (nodes[k], nodes[k + 1]);
                let (t2, t3) = (t * t, t * t * t);
                (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                    + (t3 - 2.0 * t2 + t) * h * d0
                    + (-2.0 * t3 + 3.0 * t2) * y1
                    + (t3 - t2) * h * d1
            })
            .collect::<Vec<_>>()
    };
    (eval(zu), eval(zv))
}

/// Approximate t scores keyed by nu, so that steps in rho reuse them.
struct TScoreCache<'a> {
    zu: &'a [f64],
    zv: &'a [f64],
    entries: RefCell<Vec<(f64, Rc<(Vec<f64>, Vec<f64>)>)>>,
}

impl<'a> TScoreCache<'a> {
    fn get(&self, nu: f64) -> Rc<(Vec<f64>, Vec<f64>)> {
        if let Some((_, s)) = self.entries.borrow().iter().find(|(n, _)| *n == nu) {
            return s.clone();
        }
        let s = Rc::new(t_scores_interpolated(self.zu, self.zv, nu));
        let mut e = self.entries.borrow_mut();
        if e.len() >= 4 {
            e.remove(0);
        }
        e.push((nu, s.clone()));
        s
    }

    fn loglik(&self, rho: f64, nu: f64) -> f64 {
        let k = TConst::new(rho, nu);
        let s = self.get(nu);
        sum_finite(s.0.iter().zip(&s.1).map(|(&a, &b)| k.ln_pdf(a, b)))
    }
}

fn fit_t(d: &mut Data) -> (Vec<f64>, f64) {
    let rho0 = tau_to_param(Family::StudentT, d.tau).unwrap();
    let (zu, zv) = d.normal_scores();
    let cache = TScoreCache {
        zu,
        zv,
        entries: RefCell::new(Vec::new()),
    };
    // Profile nu at the tau-inverted rho, then polish both jointly.
    let (z_nu, _) = maximize_1d(
        |z| cache.loglik(rho0, NU_MIN + z.exp()),
        (0.01f64).ln(),
        (NU_MAX - NU_MIN).ln(),
        (8.0 - NU_MIN).ln(),
        1e-4,
    );
    let to_params = |z: &[f64]| (RHO_MAX * z[0].tanh(), NU_MIN + z[1].exp().min(NU_MAX - NU_MIN));
    let neg_ll = |z: &[f64]| {
        let (r, nu) = to_params(z);
        let v = cache.loglik(r, nu);
        if v.is_finite() {
            -v
        } else {
            f64::MAX
        }
    };
    let z0 = [(rho0 / RHO_MAX).atanh(), z_nu];
    let f0 = neg_ll(&z0);
    let h = 1e-5;
    let m = bfgs(
        |z, g| {
            let f = neg_ll(z);
            for i in 0..2 {
                let mut zp = [z[0], z[1]];
                let mut zm = zp;
                zp[i] += h;
                zm[i] -= h;
                g[i] = (neg_ll(&zp) - neg_ll(&zm)) / (2.0 * h);
            }
            f
        },
        &z0,
        &BfgsOptions {
            max_iter: 30,
            grad_tol: 1e-4,
        },
    );
    let z = if m.f <= f0 { m.x } else { z0.to_vec() };
    let (r, nu) = to_params(&z);
    (vec![r, nu], t_loglik(d.u, d.v, r, nu))
}

fn fit_archimedean(d: &Data, family: Family, rot: Rotation) -> (Vec<f64>, f64) {
    let pts: Vec<(f64, f64)> = d.u.iter().zip(d.v).map(|(&a, &b)| rotate(rot, a, b)).collect();
    let (lo, hi) = match family {
        Family::Clayton => (CLAYTON_MIN, CLAYTON_MAX),
        Family::Gumbel => (1.0, GUMBEL_MAX),
        Family::Joe => (1.0, JOE_MAX),
        Family::Frank if d.tau >= 0.0 => (FRANK_MIN, FRANK_MAX),
        Family::Frank => (-FRANK_MAX, -FRANK_MIN),
        _ => unreachable!("not a one-parameter archimedean family"),
    };
    let make = |th: f64| match family {
        Family::Clayton => Param::Clayton(th),
        Family::Gumbel => Param::Gumbel(th),
        Family::Joe => Param::Joe(th),
        _ => Param::Frank(th),
    };
    let start = tau_to_param(family, d.tau).unwrap().clamp(lo, hi);
    let (th, ll) = maximize_1d(
        |th| {
            let p = make(th);
            sum_finite(pts.iter().map(|&(a, b)| p.ln_pdf(a, b)))
        },
        lo,
        hi,
        start,
        1e-8,
    );
    (vec![th], ll)
}

/// Fits every family × admissible rotation of the menu by maximum
/// likelihood and returns the copula with the smallest BIC. Ties keep the
/// earlier family in menu order.
pub fn pc_fit(u: &[f64], v: &[f64], menu: FamilyMenu) -> Result<PairCopula> {
    pc_fit_with(u, v, menu, &FitOptions::default())
}

pub fn pc_fit_with(u: &[f64], v: &[f64], menu: FamilyMenu, opts: &FitOptions) -> Result<PairCopula> {
    if u.len() != v.len() {
        return Err(Error::invalid("pseudo-observation vectors differ in length"));
    }
    if u.len() < opts.min_obs {
        return Err(Error::invalid(format!(
            "pair-copula fit needs at least {} pseudo-observations, got {}",
            opts.min_obs,
            u.len()
        )));
    }
    let uc: Vec<f64> = u.iter().map(|&x| clamp01(x)).collect();
    let vc: Vec<f64> = v.iter().map(|&x| clamp01(x)).collect();
    if uc.iter().chain(&vc).any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite pseudo-observation"));
    }
    let n = uc.len();
    let mut data = Data {
        u: &uc,
        v: &vc,
        tau: kendall_tau(&uc, &vc),
        gauss_scores: None,
    };

    let mut best: Option<PairCopula> = None;
    let mut consider = |c: PairCopula| {
        if !c.loglik.is_finite() || c.validate().is_err() {
            log::warn!("pair-copula candidate {} skipped (non-finite likelihood)", c.label());
            return;
        }
        if best.as_ref().is_none_or(|b| c.bic() < b.bic()) {
            best = Some(c);
        }
    };

    for &family in menu.families() {
        match family {
            Family::Independence => {
                let mut c = PairCopula::independence();
                c.n_obs = n;
                consider(c);
            }
            Family::Gaussian => {
                let (params, ll) = fit_gaussian(&mut data);
                consider(fitted(family, Rotation::R0, params, ll, n));
            }
            Family::StudentT => {
                let (params, ll) = fit_t(&mut data);
                consider(fitted(family, Rotation::R0, params, ll, n));
            }
            Family::Bernstein => {
                let grid = BernsteinGrid::fit(&uc, &vc);
                let ll = sum_finite(uc.iter().zip(&vc).map(|(&a, &b)| grid.pdf(a, b).ln()));
                let mut c = PairCopula {
                    family,
                    rotation: Rotation::R0,
                    params: vec![],
                    bernstein: Some(grid),
                    loglik: ll,
                    n_obs: n,
                };
                if !ll.is_finite() {
                    c.loglik = f64::NEG_INFINITY;
                }
                consider(c);
            }
            _ => {
                for &rot in rotations(family, data.tau) {
                    let (params, ll) = fit_archimedean(&data, family, rot);
                    consider(fitted(family, rot, params, ll, n));
                }
            }
        }
    }
    best.ok_or_else(|| Error::FitFailure {
        message: format!("no pair-copula family of menu {} could be fitted", menu.tag()),
        last_iterate: None,
    })
}

fn fitted(family: Family, rotation: Rotation, params: Vec<f64>, loglik: f64, n_obs: usize) -> PairCopula {
    PairCopula {
        family,
        rotation,
        params,
        bernstein: None,
        loglik,
        n_obs,
    }
}

/// Draws n pairs from a copula by conditional inversion.
pub fn simulate<R: rand::Rng + ?Sized>(c: &PairCopula, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random();
        let p: f64 = rng.random();
        u.push(clamp01(a));
        v.push(c.hinv1(p, a));
    }
    (u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fast_tau_matches_naive_with_ties() {
        let x = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 0.5];
        let y = [2.0, 1.0, 1.0, 5.0, 3.0, 3.0, 2.0, 2.0];
        assert!((kendall_tau(&x, &y) - kendall_tau_naive(&x, &y)).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_clayton() {
        let c = PairCopula::new(Family::Clayton, Rotation::R0, vec![2.0]).unwrap();
        let mut rng = crate::rng::stream(11, &[]);
        let (u, v) = simulate(&c, 1500, &mut rng);
        let d = Data { u: &u, v: &v, tau: kendall_tau(&u, &v), gauss_scores: None };
        let (theta, _) = fit_archimedean(&d, Family::Clayton, Rotation::R0);
        assert!((theta[0] - 2.0).abs() < 0.3, "{theta:?}");
        // Survival Joe is also lower-tail dependent and may win on a finite sample.
        let f = pc_fit(&u, &v, FamilyMenu::P).unwrap();
        assert!(
            matches!((f.family, f.rotation), (Family::Clayton, Rotation::R0) | (Family::Joe, Rotation::R180)),
            "{}",
            f.label()
        );
        assert!((f.tau() - 0.5).abs() < 0.05, "{}", f.label());
    }

    #[test]
    fn negative_dependence_uses_rotations() {
        let c = PairCopula::new(Family::Gumbel, Rotation::R90, vec![2.5]).unwrap();
        let mut rng = crate::rng::stream(12, &[]);
        let (u, v) = simulate(&c, 1500, &mut rng);
        assert!(kendall_tau(&u, &v) < -0.4);
        let f = pc_fit(&u, &v, FamilyMenu::P).unwrap();
        assert_eq!(f.rotation, Rotation::R90, "{}", f.label());
        let ind = {
            let mut i = PairCopula::independence();
            i.n_obs = u.len();
            i
        };
        assert!(f.bic() <= ind.bic());
    }

    #[test]
    fn menu_g_only_returns_gaussian() {
        let c = PairCopula::new(Family::Clayton, Rotation::R0, vec![1.0]).unwrap();
        let mut rng = crate::rng::stream(13, &[]);
        let (u, v) = simulate(&c, 300, &mut rng);
        assert_eq!(pc_fit(&u, &v, FamilyMenu::G).unwrap().family, Family::Gaussian);
    }

    #[test]
    fn too_few_observations() {
        assert!(pc_fit(&[0.5; 5], &[0.5; 5], FamilyMenu::P).is_err());
    }

    proptest! {
        #[test]
        fn tau_algorithms_agree(seed in 0u64..500, n in 2usize..80) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, &[1]);
            let x: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 6.0).floor()).collect();
            let y: Vec<f64> = x.iter().map(|a| (a + rng.random::<f64>() * 4.0).floor()).collect();
            prop_assert!((kendall_tau(&x, &y) - kendall_tau_naive(&x, &y)).abs() < 1e-12);
        }
    }
}

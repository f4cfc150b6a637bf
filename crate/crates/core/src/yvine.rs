//! Y-vine copula regression for the bivariate response (Y_u, Y_v) given
//! covariates.
//!
//! Structure with selected covariates U_1..U_k (in selection order):
//! - u-branch: c_{Vu,U_j; U_1..U_{j-1}}, arguments (Vu | U_<j, U_j | U_<j)
//! - v-branch: the same with Vv
//! - covariate chain: c_{U_j,U_i; U_1..U_{i-1}} for i < j, arguments
//!   (U_j | U_<i, U_i | U_<i), giving F(U_j | U_<j) by h-function recursion
//! - top: c_{Vu,Vv; U_1..U_k}, arguments (Vu | U, Vv | U)
//!
//! Chain copulas cancel from the conditional density but are required to
//! build the conditional covariate PITs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{clamp01, pc_fit, FamilyMenu, Kde, PairCopula};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::special::{norm_cdf, norm_quantile};

pub const MIN_TRAIN_DAYS: usize = 200;
pub const MAX_SAMPLE_ATTEMPTS: u64 = 5;

/// Marginal distribution of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Margin {
    Kde(Kde),
    /// Exact normal margin, for injecting known margins in oracle checks.
    Normal { mean: f64, sd: f64 },
}

impl Margin {
    /// PIT clamped to `[1e-10, 1 - 1e-10]`.
    pub fn cdf(&self, x: f64) -> f64 {
        clamp01(match self {
            Margin::Kde(k) => k.cdf(x),
            Margin::Normal { mean, sd } => norm_cdf((x - mean) / sd),
        })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            Margin::Kde(k) => k.ln_pdf(x),
            Margin::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * crate::special::LN_2PI
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        let p = clamp01(p);
        match self {
            Margin::Kde(k) => k.quantile(p),
            Margin::Normal { mean, sd } => Ok(mean + sd * norm_quantile(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YVineConfig {
    pub menu: FamilyMenu,
    pub max_k: usize,
    pub bandwidth_scale: f64,
}

impl Default for YVineConfig {
    fn default() -> Self {
        Self {
            menu: FamilyMenu::P,
            max_k: 15,
            bandwidth_scale: 1.0,
        }
    }
}

impl YVineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(Error::Config("bandwidth scale must be positive".into()));
        }
        Ok(())
    }
}

/// Margins supplied instead of kernel estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedMargins {
    pub u: Margin,
    pub v: Margin,
    /// One per candidate covariate column.
    pub covariates: Vec<Margin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YVineModel {
    pub menu: FamilyMenu,
    /// Names of all candidate covariates; `selected` indexes into them.
    pub covariate_names: Vec<String>,
    pub selected: Vec<usize>,
    pub margin_u: Margin,
    pub margin_v: Margin,
    /// Margins of the selected covariates, in selection order.
    pub covariate_margins: Vec<Margin>,
    pub branch_u: Vec<PairCopula>,
    pub branch_v: Vec<PairCopula>,
    /// `chain[j][i]` for `i < j`.
    pub chain: Vec<Vec<PairCopula>>,
    pub top: PairCopula,
    /// Conditional BIC of the model after 0, 1, .., k selections.
    pub cbic_path: Vec<f64>,
    pub n_train: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl YVineModel {
    pub fn k(&self) -> usize {
        self.selected.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.covariate_margins.len() != k || self.branch_u.len() != k || self.branch_v.len() != k || self.chain.len() != k {
            return Err(Error::invalid("Y-vine branches must match the number of selected covariates"));
        }
        if self.chain.iter().enumerate().any(|(j, c)| c.len() != j) {
            return Err(Error::invalid("Y-vine covariate chain has the wrong shape"));
        }
        if self.selected.iter().any(|&s| s >= self.covariate_names.len()) {
            return Err(Error::invalid("Y-vine selection refers to an unknown covariate"));
        }
        if self.menu == FamilyMenu::G {
            let all = self.branch_u.iter().chain(&self.branch_v).chain(self.chain.iter().flatten()).chain([&self.top]);
            if all.into_iter().any(|c| c.family != crate::copula::Family::Gaussian) {
                return Err(Error::invalid("Gaussian menu Y-vine holds a non-Gaussian pair copula"));
            }
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.covariate_names.len() {
            return Err(Error::Schema(format!(
                "Y-vine expects {} covariates, got {}",
                self.covariate_names.len(),
                x.len()
            )));
        }
        for &s in &self.selected {
            if !x[s].is_finite() {
                return Err(Error::invalid(format!("covariate {} is not finite", self.covariate_names[s])));
            }
        }
        Ok(())
    }

    /// F(U_j | U_1..U_{j-1}) for each selected covariate.
    pub fn conditional_covariate_pits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let mut w = Vec::with_capacity(self.k());
        for (j, &s) in self.selected.iter().enumerate() {
            let mut t = self.covariate_margins[j].cdf(x[s]);
            for (i, c) in self.chain[j].iter().enumerate() {
                t = c.h2(t, w[i]);
            }
            w.push(t);
        }
        Ok(w)
    }

    /// Marginal PITs of the responses and selected covariates:
    /// `(v_u, v_v, u_1..u_k)`.
    pub fn pits(&self, y: [f64; 2], x: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        self.check_x(x)?;
        let u = self
            .selected
            .iter()
            .zip(&self.covariate_margins)
            .map(|(&s, m)| m.cdf(x[s]))
            .collect();
        Ok((self.margin_u.cdf(y[0]), self.margin_v.cdf(y[1]), u))
    }

    /// Conditional log-density of `y` given `x`. The value may be infinite
    /// at the clamping boundary; callers flag such cases.
    pub fn logdensity(&self, y: [f64; 2], x: &[f64]) -> Result<f64> {
        let w = self.conditional_covariate_pits(x)?;
        Ok(self.logdensity_given(y, &w))
    }

    fn logdensity_given(&self, y: [f64; 2], w: &[f64]) -> f64 {
        let mut a = self.margin_u.cdf(y[0]);
        let mut b = self.margin_v.cdf(y[1]);
        let mut ll = self.margin_u.ln_pdf(y[0]) + self.margin_v.ln_pdf(y[1]);
        for (j, &wj) in w.iter().enumerate() {
            ll += self.branch_u[j].ln_pdf(a, wj) + self.branch_v[j].ln_pdf(b, wj);
            a = self.branch_u[j].h2(a, wj);
            b = self.branch_v[j].h2(b, wj);
        }
        ll + self.top.ln_pdf(a, b)
    }

    /// `n` draws from the conditional distribution given `x`.
    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
        let w = self.conditional_covariate_pits(x)?;
        'attempt: for attempt in 0..MAX_SAMPLE_ATTEMPTS {
            let mut rng = stream(seed, &[attempt]);
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let (w1, w2): (f64, f64) = (rng.random(), rng.random());
                match self.invert(w1, w2, &w) {
                    Some(y) => out.push(y),
                    None => {
                        log::warn!("Y-vine inversion failed, resampling (attempt {})", attempt + 1);
                        continue 'attempt;
                    }
                }
            }
            return Ok(out);
        }
        Err(Error::FitFailure {
            message: format!("Y-vine sampling failed after {MAX_SAMPLE_ATTEMPTS} attempts"),
            last_iterate: None,
        })
    }

    fn invert(&self, w1: f64, w2: f64, w: &[f64]) -> Option<[f64; 2]> {
        let k = w.len();
        let mut a = clamp01(w1);
        let b_top = self.top.hinv1(clamp01(w2), a);
        for j in (0..k).rev() {
            a = self.branch_u[j].hinv2(a, w[j]);
        }
        let mut b = b_top;
        for j in (0..k).rev() {
            b = self.branch_v[j].hinv2(b, w[j]);
        }
        if !(a.is_finite() && b.is_finite()) {
            return None;
        }
        let yu = self.margin_u.quantile(a).ok()?;
        let yv = self.margin_v.quantile(b).ok()?;
        (yu.is_finite() && yv.is_finite()).then_some([yu, yv])
    }
}

struct Trial {
    score: f64,
    cu: PairCopula,
    cv: PairCopula,
    top: PairCopula,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn h2_all(c: &PairCopula, a: &[f64], w: &[f64]) -> Vec<f64> {
    a.iter().zip(w).map(|(&x, &z)| c.h2(x, z)).collect()
}

fn fit_margin(values: &[f64], scale: f64) -> Result<Margin> {
    Ok(Margin::Kde(Kde::fit(values, scale)?))
}

/// Forward selection by conditional BIC.
///
/// `x[t]` is the candidate covariate vector of day `t`. The conditional BIC
/// counts the pair copulas that involve a response: both branches and the
/// top copula.
pub fn yvine_fit(y: &[[f64; 2]], x: &[Vec<f64>], names: &[&str], config: &YVineConfig) -> Result<YVineModel> {
    yvine_fit_with(y, x, names, config, None)
}

pub fn yvine_fit_with(y: &[[f64; 2]], x: &[Vec<f64>], names: &[&str], config: &YVineConfig, injected: Option<InjectedMargins>) -> Result<YVineModel> {
    config.validate()?;
    let n = y.len();
    let p = names.len();
    if n < MIN_TRAIN_DAYS {
        return Err(Error::invalid(format!("Y-vine fitting needs at least {MIN_TRAIN_DAYS} training days, got {n}")));
    }
    if x.len() != n || x.iter().any(|r| r.len() != p) {
        return Err(Error::Schema("covariate rows do not match responses and names".into()));
    }
    if y.iter().flatten().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("Y-vine data must be complete and finite"));
    }
    let mut warnings = Vec::new();
    let col = |j: usize| x.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let yu: Vec<f64> = y.iter().map(|r| r[0]).collect();
    let yv: Vec<f64> = y.iter().map(|r| r[1]).collect();
    let (margin_u, margin_v, mut cov_margins): (Margin, Margin, Vec<Option<Margin>>) = match injected {
        Some(m) => {
            if m.covariates.len() != p {
                return Err(Error::Schema("one injected margin per candidate covariate is required".into()));
            }
            (m.u, m.v, m.covariates.into_iter().map(Some).collect())
        }
        None => {
            let mu = fit_margin(&yu, config.bandwidth_scale)?;
            let mv = fit_margin(&yv, config.bandwidth_scale)?;
            let cm = (0..p)
                .map(|j| match fit_margin(&col(j), config.bandwidth_scale) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        warnings.push(format!("covariate {} excluded: {e}", names[j]));
                        None
                    }
                })
                .collect();
            (mu, mv, cm)
        }
    };
    let mut a: Vec<f64> = yu.iter().map(|&v| margin_u.cdf(v)).collect();
    let mut b: Vec<f64> = yv.iter().map(|&v| margin_v.cdf(v)).collect();
    // Conditional PITs of every remaining candidate given the selection.
    let mut w: Vec<Option<Vec<f64>>> = (0..p)
        .map(|j| cov_margins[j].as_ref().map(|m| col(j).iter().map(|&v| m.cdf(v)).collect()))
        .collect();
    let mut chains: Vec<Vec<PairCopula>> = vec![Vec::new(); p];

    let mut top = pc_fit(&a, &b, config.menu)?;
    let mut branch_bic = 0.0;
    let mut current = top.bic();
    let mut model = YVineModel {
        menu: config.menu,
        covariate_names: names.iter().map(|s| s.to_string()).collect(),
        selected: Vec::new(),
        margin_u,
        margin_v,
        covariate_margins: Vec::new(),
        branch_u: Vec::new(),
        branch_v: Vec::new(),
        chain: Vec::new(),
        top: top.clone(),
        cbic_path: vec![current],
        n_train: n,
        warnings: Vec::new(),
    };

    while model.k() < config.max_k.min(p) {
        let candidates: Vec<usize> = (0..p).filter(|&c| w[c].is_some()).collect();
        if candidates.is_empty() {
            break;
        }
        let trials: Vec<Option<Trial>> = candidates
            .par_iter()
            .map(|&c| {
                let wc = w[c].as_ref().expect("candidate has PITs");
                let cu = pc_fit(&a, wc, config.menu).ok()?;
                let cv = pc_fit(&b, wc, config.menu).ok()?;
                let a2 = h2_all(&cu, &a, wc);
                let b2 = h2_all(&cv, &b, wc);
                let t = pc_fit(&a2, &b2, config.menu).ok()?;
                let score = branch_bic + cu.bic() + cv.bic() + t.bic();
                score.is_finite().then_some(Trial {
                    score,
                    cu,
                    cv,
                    top: t,
                    a: a2,
                    b: b2,
                })
            })
            .collect();
        let mut best: Option<(usize, Trial)> = None;
        for (&c, t) in candidates.iter().zip(trials) {
            match t {
                Some(t) if best.as_ref().is_none_or(|(_, b)| t.score < b.score) => best = Some((c, t)),
                Some(_) => {}
                None => warnings.push(format!("trial of covariate {} failed at step {}", names[c], model.k() + 1)),
            }
        }
        let Some((c, t)) = best else {
            break;
        };
        if !(t.score < current) {
            break;
        }
        assert!(t.score < current);
        current = t.score;
        branch_bic += t.cu.bic() + t.cv.bic();
        a = t.a;
        b = t.b;
        top = t.top;
        let wc = w[c].take().expect("selected candidate has PITs");
        model.selected.push(c);
        model.covariate_margins.push(cov_margins[c].take().expect("selected candidate has a margin"));
        model.branch_u.push(t.cu);
        model.branch_v.push(t.cv);
        model.chain.push(std::mem::take(&mut chains[c]));
        model.cbic_path.push(current);
        if model.k() >= config.max_k.min(p) {
            break;
        }
        // Extend every remaining candidate's chain by the new covariate.
        let remaining: Vec<usize> = (0..p).filter(|&r| w[r].is_some()).collect();
        let fits: Vec<Result<PairCopula>> = remaining
            .par_iter()
            .map(|&r| pc_fit(w[r].as_ref().expect("remaining candidate"), &wc, config.menu))
            .collect();
        for (&r, f) in remaining.iter().zip(fits) {
            match f {
                Ok(cop) => {
                    let wr = w[r].as_ref().expect("remaining candidate");
                    w[r] = Some(h2_all(&cop, wr, &wc));
                    chains[r].push(cop);
                }
                Err(e) => {
                    warnings.push(format!("covariate {} dropped: chain fit failed ({e})", names[r]));
                    w[r] = None;
                }
            }
        }
    }
    model.top = top;
    model.warnings = warnings;
    model.validate()?;
    Ok(model)
}

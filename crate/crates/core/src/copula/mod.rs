//! Pair copulas, their fitting, and kernel-density margins.

mod bernstein;
mod families;
mod fit;
mod kde;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bernstein::{BernsteinGrid, DEGREE as BERNSTEIN_DEGREE};
pub use fit::{kendall_tau, kendall_tau_naive, pc_fit, pc_fit_with, simulate as pc_simulate, FamilyMenu, FitOptions};
pub use kde::Kde;

use crate::error::{Error, Result};
use families::Param;

/// Lower clamp for every (0, 1) argument; the upper clamp is `1 - EPS`.
pub const EPS: f64 = 1e-10;

#[inline]
pub fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    x.clamp(EPS, 1.0 - EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Independence,
    Gaussian,
    #[serde(rename = "student-t")]
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
    Bernstein,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Independence,
        Family::Gaussian,
        Family::StudentT,
        Family::Clayton,
        Family::Gumbel,
        Family::Frank,
        Family::Joe,
        Family::Bernstein,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::StudentT => "student-t",
            Family::Clayton => "clayton",
            Family::Gumbel => "gumbel",
            Family::Frank => "frank",
            Family::Joe => "joe",
            Family::Bernstein => "bernstein",
        }
    }

    /// Families whose rotations differ from the unrotated copula.
    pub fn is_asymmetric_tail(self) -> bool {
        matches!(self, Family::Clayton | Family::Gumbel | Family::Joe)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown copula family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rotation {
    #[serde(rename = "0")]
    R0,
    #[serde(rename = "90")]
    R90,
    #[serde(rename = "180")]
    R180,
    #[serde(rename = "270")]
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

/// A fitted or user-specified bivariate copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCopula {
    pub family: Family,
    pub rotation: Rotation,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bernstein: Option<BernsteinGrid>,
    /// Log-likelihood on the fitting sample (0 when not fitted).
    #[serde(default)]
    pub loglik: f64,
    #[serde(default)]
    pub n_obs: usize,
}

pub(crate) enum Kernel<'a> {
    Param(Param),
    Bernstein(&'a BernsteinGrid),
}

impl Kernel<'_> {
    fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        match self {
            Kernel::Param(p) => p.ln_pdf(u, v),
            Kernel::Bernstein(g) => g.pdf(u, v).ln(),
        }
    }

    fn h1(&self, u: f64, v: f64) -> f64 {
        match self {
            Kernel::Param(p) => p.h2(v, u),
            Kernel::Bernstein(g) => g.h1(u, v),
        }
    }

    fn h2(&self, u: f64, v: f64) -> f64 {
        match self {
            Kernel::Param(p) => p.h2(u, v),
            Kernel::Bernstein(g) => g.h2(u, v),
        }
    }

    fn hinv1(&self, p: f64, u: f64) -> f64 {
        match self {
            Kernel::Param(k) => k.hinv2(p, u),
            Kernel::Bernstein(g) => g.hinv1(p, u),
        }
    }

    fn hinv2(&self, p: f64, v: f64) -> f64 {
        match self {
            Kernel::Param(k) => k.hinv2(p, v),
            Kernel::Bernstein(g) => g.hinv2(p, v),
        }
    }
}

impl PairCopula {
    pub fn independence() -> Self {
        Self {
            family: Family::Independence,
            rotation: Rotation::R0,
            params: vec![],
            bernstein: None,
            loglik: 0.0,
            n_obs: 0,
        }
    }

    /// Validated constructor for parametric families.
    pub fn new(family: Family, rotation: Rotation, params: Vec<f64>) -> Result<Self> {
        let c = Self {
            family,
            rotation,
            params,
            bernstein: None,
            loglik: 0.0,
            n_obs: 0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn gaussian(rho: f64) -> Result<Self> {
        Self::new(Family::Gaussian, Rotation::R0, vec![rho])
    }

    pub fn from_bernstein(grid: BernsteinGrid) -> Result<Self> {
        let c = Self {
            family: Family::Bernstein,
            rotation: Rotation::R0,
            params: vec![],
            bernstein: Some(grid),
            loglik: 0.0,
            n_obs: 0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("{} copula: {msg}", self.family)));
        let p = &self.params;
        let want = match self.family {
            Family::Independence | Family::Bernstein => 0,
            Family::StudentT => 2,
            _ => 1,
        };
        if p.len() != want {
            return bad(&format!("expected {want} parameters, got {}", p.len()));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.family == Family::Independence && self.rotation != Rotation::R0 {
            return bad("independence has no rotations");
        }
        match self.family {
            Family::Independence => {}
            Family::Gaussian if p[0].abs() >= 1.0 => return bad("|rho| must be < 1"),
            Family::StudentT if p[0].abs() >= 1.0 || p[1] <= 2.0 => return bad("need |rho| < 1 and nu > 2"),
            Family::Clayton if p[0] <= 0.0 => return bad("theta must be > 0"),
            Family::Gumbel | Family::Joe if p[0] < 1.0 => return bad("theta must be >= 1"),
            Family::Frank if p[0] == 0.0 => return bad("theta must be nonzero"),
            Family::Bernstein => match &self.bernstein {
                Some(g) if g.is_valid() => {}
                _ => return bad("weight grid missing or not doubly stochastic"),
            },
            _ => {}
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        match self.family {
            Family::Bernstein => self.bernstein.as_ref().map_or(0, |g| g.n_params()),
            _ => self.params.len(),
        }
    }

    pub(crate) fn kernel(&self) -> Kernel<'_> {
        let p = &self.params;
        match self.family {
            Family::Independence => Kernel::Param(Param::Indep),
            Family::Gaussian => Kernel::Param(Param::Gauss(p[0])),
            Family::StudentT => Kernel::Param(Param::T { rho: p[0], nu: p[1] }),
            Family::Clayton => Kernel::Param(Param::Clayton(p[0])),
            Family::Gumbel => Kernel::Param(Param::Gumbel(p[0])),
            Family::Frank => Kernel::Param(Param::Frank(p[0])),
            Family::Joe => Kernel::Param(Param::Joe(p[0])),
            Family::Bernstein => Kernel::Bernstein(self.bernstein.as_ref().expect("validated grid")),
        }
    }

    pub fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        if self.family == Family::Independence {
            return 0.0;
        }
        let (u, v) = (clamp01(u), clamp01(v));
        let k = self.kernel();
        match self.rotation {
            Rotation::R0 => k.ln_pdf(u, v),
            Rotation::R90 => k.ln_pdf(1.0 - u, v),
            Rotation::R180 => k.ln_pdf(1.0 - u, 1.0 - v),
            Rotation::R270 => k.ln_pdf(u, 1.0 - v),
        }
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.ln_pdf(u, v).exp()
    }

    /// P(V <= v | U = u) = dC/du.
    pub fn h1(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        let k = self.kernel();
        clamp01(match self.rotation {
            Rotation::R0 => k.h1(u, v),
            Rotation::R90 => k.h1(1.0 - u, v),
            Rotation::R180 => 1.0 - k.h1(1.0 - u, 1.0 - v),
            Rotation::R270 => 1.0 - k.h1(u, 1.0 - v),
        })
    }

    /// P(U <= u | V = v) = dC/dv.
    pub fn h2(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        let k = self.kernel();
        clamp01(match self.rotation {
            Rotation::R0 => k.h2(u, v),
            Rotation::R90 => 1.0 - k.h2(1.0 - u, v),
            Rotation::R180 => 1.0 - k.h2(1.0 - u, 1.0 - v),
            Rotation::R270 => k.h2(u, 1.0 - v),
        })
    }

    /// Inverse of `h1` in v.
    pub fn hinv1(&self, p: f64, u: f64) -> f64 {
        let (p, u) = (clamp01(p), clamp01(u));
        let k = self.kernel();
        clamp01(match self.rotation {
            Rotation::R0 => k.hinv1(p, u),
            Rotation::R90 => k.hinv1(p, 1.0 - u),
            Rotation::R180 => 1.0 - k.hinv1(1.0 - p, 1.0 - u),
            Rotation::R270 => 1.0 - k.hinv1(1.0 - p, u),
        })
    }

    /// Inverse of `h2` in u.
    pub fn hinv2(&self, p: f64, v: f64) -> f64 {
        let (p, v) = (clamp01(p), clamp01(v));
        let k = self.kernel();
        clamp01(match self.rotation {
            Rotation::R0 => k.hinv2(p, v),
            Rotation::R90 => 1.0 - k.hinv2(1.0 - p, v),
            Rotation::R180 => 1.0 - k.hinv2(1.0 - p, 1.0 - v),
            Rotation::R270 => k.hinv2(p, 1.0 - v),
        })
    }

    /// Kendall's tau of the (rotated) copula.
    pub fn tau(&self) -> f64 {
        let base = match self.kernel() {
            Kernel::Param(p) => p.tau(),
            Kernel::Bernstein(g) => g.tau(),
        };
        match self.rotation {
            Rotation::R0 | Rotation::R180 => base,
            Rotation::R90 | Rotation::R270 => -base,
        }
    }

    pub fn bic(&self) -> f64 {
        -2.0 * self.loglik + self.n_params() as f64 * (self.n_obs.max(1) as f64).ln()
    }

    /// Short human-readable description, e.g. `clayton(270)[2.5]`.
    pub fn label(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|p| format!("{p:.4}")).collect();
        format!("{}({})[{}]", self.family, self.rotation.degrees(), params.join(","))
    }
}

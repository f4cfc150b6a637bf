//! Oracles shared by the integration tests. Everything here is written from
//! textbook closed forms, independently of the library kernels.
#![allow(dead_code)]

use bivpost::copula::{Family, PairCopula, Rotation};
use statrs::function::beta::beta_reg;
use std::f64::consts::PI;

pub fn gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    bivpost::special::gauss_legendre(n)
}

pub fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gl(order);
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for k in 0..panels {
        let m = a + (k as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(m + 0.5 * h * xi);
        }
    }
    0.5 * h * s
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn phi_inv(p: f64) -> f64 {
    bivpost::special::norm_quantile(p)
}

/// Bivariate standard normal CDF by Plackett's identity
/// `d Phi2 / d r = phi2(x, y; r)`.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    let dens = |r: f64| {
        let omr = 1.0 - r * r;
        (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * omr)).exp() / (2.0 * PI * omr.sqrt())
    };
    phi(x) * phi(y) + quad(dens, 0.0, rho, 8, 20)
}

/// Bivariate t CDF as a chi-square scale mixture of bivariate normals.
pub fn bvt_cdf(x: f64, y: f64, rho: f64, nu: f64) -> f64 {
    let ln_norm = -(0.5 * nu) * 2f64.ln() - statrs::function::gamma::ln_gamma(0.5 * nu);
    let chi2 = |w: f64| (ln_norm + (0.5 * nu - 1.0) * w.ln() - 0.5 * w).exp();
    let upper = nu + 60.0 * (2.0 * nu).sqrt();
    quad(
        |w| {
            let s = (w / nu).sqrt();
            chi2(w) * bvn_cdf(x * s, y * s, rho)
        },
        0.0,
        upper,
        60,
        16,
    )
}

fn t_inv(p: f64, nu: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    // Bisection on the incomplete-beta CDF keeps this independent of the
    // library's quantile routine.
    let cdf = |x: f64| {
        let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
        if x > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    };
    let guess = StudentsT::new(0.0, 1.0, nu).unwrap().inverse_cdf(p);
    let (mut lo, mut hi) = (guess - 1.0, guess + 1.0);
    while cdf(lo) > p {
        lo -= 1.0;
    }
    while cdf(hi) < p {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unrotated copula CDF from closed forms.
pub fn base_cdf(c: &PairCopula, u: f64, v: f64) -> f64 {
    let p = &c.params;
    match c.family {
        Family::Independence => u * v,
        Family::Gaussian => bvn_cdf(phi_inv(u), phi_inv(v), p[0]),
        Family::StudentT => bvt_cdf(t_inv(u, p[1]), t_inv(v, p[1]), p[0], p[1]),
        Family::Clayton => (u.powf(-p[0]) + v.powf(-p[0]) - 1.0).powf(-1.0 / p[0]),
        Family::Gumbel => {
            let th = p[0];
            (-((-u.ln()).powf(th) + (-v.ln()).powf(th)).powf(1.0 / th)).exp()
        }
        Family::Frank => {
            let th = p[0];
            -1.0 / th * (1.0 + ((-th * u).exp() - 1.0) * ((-th * v).exp() - 1.0) / ((-th).exp() - 1.0)).ln()
        }
        Family::Joe => {
            let th = p[0];
            let (a, b) = ((1.0 - u).powf(th), (1.0 - v).powf(th));
            1.0 - (a + b - a * b).powf(1.0 / th)
        }
        Family::Bernstein => {
            let g = c.bernstein.as_ref().unwrap();
            let m = g.degree;
            // G_i(u) = I_u(i + 1, m - i).
            let gu: Vec<f64> = (0..m).map(|i| beta_reg((i + 1) as f64, (m - i) as f64, u)).collect();
            let gv: Vec<f64> = (0..m).map(|j| beta_reg((j + 1) as f64, (m - j) as f64, v)).collect();
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    s += g.weights[i * m + j] * gu[i] * gv[j];
                }
            }
            s
        }
    }
}

/// Rotated copula CDF.
pub fn cdf(c: &PairCopula, u: f64, v: f64) -> f64 {
    match c.rotation {
        Rotation::R0 => base_cdf(c, u, v),
        Rotation::R90 => v - base_cdf(c, 1.0 - u, v),
        Rotation::R180 => u + v - 1.0 + base_cdf(c, 1.0 - u, 1.0 - v),
        Rotation::R270 => u - base_cdf(c, u, 1.0 - v),
    }
}

/// Five-point central difference.
pub fn deriv<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Copulas covering every family, used by the kernel property checks.
pub fn copula_zoo() -> Vec<PairCopula> {
    use bivpost::copula::{pc_simulate, BernsteinGrid};
    let mut base = vec![
        PairCopula::new(Family::Gaussian, Rotation::R0, vec![0.7]).unwrap(),
        PairCopula::new(Family::StudentT, Rotation::R0, vec![0.6, 4.0]).unwrap(),
        PairCopula::new(Family::Clayton, Rotation::R0, vec![2.5]).unwrap(),
        PairCopula::new(Family::Gumbel, Rotation::R0, vec![2.0]).unwrap(),
        PairCopula::new(Family::Frank, Rotation::R0, vec![6.0]).unwrap(),
        PairCopula::new(Family::Joe, Rotation::R0, vec![2.2]).unwrap(),
    ];
    let clayton = PairCopula::new(Family::Clayton, Rotation::R0, vec![3.0]).unwrap();
    let mut rng = bivpost::rng::stream(99, &[]);
    let (u, v) = pc_simulate(&clayton, 2000, &mut rng);
    base.push(PairCopula::from_bernstein(BernsteinGrid::fit(&u, &v)).unwrap());
    let mut out = vec![PairCopula::independence()];
    for c in base {
        for rot in Rotation::ALL {
            let mut r = c.clone();
            r.rotation = rot;
            out.push(r);
        }
    }
    out
}

pub fn grid19() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Maximum h/hinv round-trip error over the 19x19 grid (both directions).
pub fn max_roundtrip_error(c: &PairCopula) -> f64 {
    let g = grid19();
    let mut worst: f64 = 0.0;
    for &u in &g {
        for &v in &g {
            worst = worst.max((c.hinv2(c.h2(u, v), v) - u).abs());
            worst = worst.max((c.hinv1(c.h1(u, v), u) - v).abs());
        }
    }
    worst
}

/// Maximum |h - numeric dC| over the 19x19 grid (both directions).
pub fn max_h_vs_numeric(c: &PairCopula) -> f64 {
    let g = grid19();
    let mut worst: f64 = 0.0;
    let step = 1e-3;
    for &u in &g {
        for &v in &g {
            let dv = deriv(|t| cdf(c, u, t), v, step);
            let du = deriv(|t| cdf(c, t, v), u, step);
            worst = worst.max((c.h2(u, v) - dv).abs());
            worst = worst.max((c.h1(u, v) - du).abs());
        }
    }
    worst
}

/// Maximum deviation of the conditional margins from one, plus the total
/// mass deviation.
pub fn max_margin_error(c: &PairCopula) -> f64 {
    let mut worst: f64 = 0.0;
    for &u in &grid19() {
        worst = worst.max((quad(|v| c.pdf(u, v), 0.0, 1.0, 200, 10) - 1.0).abs());
        worst = worst.max((quad(|v| c.pdf(v, u), 0.0, 1.0, 200, 10) - 1.0).abs());
    }
    let total = quad(|u| quad(|v| c.pdf(u, v), 0.0, 1.0, 100, 10), 0.0, 1.0, 100, 10);
    worst.max((total - 1.0).abs())
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn mat_inv(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let pivot_row = m[c].clone();
                for (v, p) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn submatrix(a: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| idx.iter().map(|&j| a[i][j]).collect()).collect()
}

/// Partial correlation of variables `a` and `b` given `given`, from the
/// precision matrix of the sub-block.
pub fn partial_corr(r: &[Vec<f64>], a: usize, b: usize, given: &[usize]) -> f64 {
    let mut idx = vec![a, b];
    idx.extend_from_slice(given);
    let p = mat_inv(&submatrix(r, &idx));
    -p[0][1] / (p[0][0] * p[1][1]).sqrt()
}

/// Random correlation matrix `D^{-1/2} W W' D^{-1/2}` with Gaussian `W`.
pub fn random_corr<R: rand::Rng>(rng: &mut R, d: usize) -> Vec<Vec<f64>> {
    use rand_distr::StandardNormal;
    let w: Vec<Vec<f64>> = (0..d).map(|_| (0..d + 2).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let s: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| w[i].iter().zip(&w[j]).map(|(a, b)| a * b).sum()).collect())
        .collect();
    (0..d).map(|i| (0..d).map(|j| s[i][j] / (s[i][i] * s[j][j]).sqrt()).collect()).collect()
}

/// Mean and covariance of the first two coordinates of a standard
/// Gaussian vector with correlation `r`, given the remaining ones equal `z`.
pub fn gaussian_conditional(r: &[Vec<f64>], z: &[f64]) -> ([f64; 2], [[f64; 2]; 2]) {
    let d = r.len();
    let rest: Vec<usize> = (2..d).collect();
    if rest.is_empty() {
        return ([0.0; 2], [[r[0][0], r[0][1]], [r[1][0], r[1][1]]]);
    }
    let rxx_inv = mat_inv(&submatrix(r, &rest));
    let mut mean = [0.0; 2];
    let mut cov = [[0.0; 2]; 2];
    for a in 0..2 {
        let coef: Vec<f64> = (0..rest.len())
            .map(|j| (0..rest.len()).map(|i| r[a][rest[i]] * rxx_inv[i][j]).sum())
            .collect();
        mean[a] = coef.iter().zip(z).map(|(c, v)| c * v).sum();
        for b in 0..2 {
            cov[a][b] = r[a][b] - coef.iter().zip(&rest).map(|(c, &j)| c * r[j][b]).sum::<f64>();
        }
    }
    (mean, cov)
}

pub fn bvn_logpdf(y: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let (a, b) = (y[0] - mean[0], y[1] - mean[1]);
    let q = (cov[1][1] * a * a - 2.0 * cov[0][1] * a * b + cov[0][0] * b * b) / det;
    -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * q
}

/// Lower Cholesky factor.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (a[i][i] - s).sqrt() } else { (a[i][j] - s) / l[j][j] };
        }
    }
    l
}

/// All-Gaussian Y-vine with variables ordered (Y_u, Y_v, X_1..X_k) in `r`
/// and normal margins `(mean, sd)`.
pub fn gaussian_yvine(r: &[Vec<f64>], margins: &[(f64, f64)]) -> bivpost::yvine::YVineModel {
    let k = r.len() - 2;
    let x = |j: usize| j + 2;
    let prefix = |j: usize| (0..j).map(x).collect::<Vec<_>>();
    let g = |rho: f64| bivpost::copula::PairCopula::gaussian(rho).unwrap();
    let normal = |i: usize| bivpost::yvine::Margin::Normal {
        mean: margins[i].0,
        sd: margins[i].1,
    };
    bivpost::yvine::YVineModel {
        menu: bivpost::copula::FamilyMenu::G,
        covariate_names: (0..k).map(|j| format!("x{j}")).collect(),
        selected: (0..k).collect(),
        margin_u: normal(0),
        margin_v: normal(1),
        covariate_margins: (0..k).map(|j| normal(x(j))).collect(),
        branch_u: (0..k).map(|j| g(partial_corr(r, 0, x(j), &prefix(j)))).collect(),
        branch_v: (0..k).map(|j| g(partial_corr(r, 1, x(j), &prefix(j)))).collect(),
        chain: (0..k)
            .map(|j| (0..j).map(|i| g(partial_corr(r, x(j), x(i), &prefix(i)))).collect())
            .collect(),
        top: g(partial_corr(r, 0, 1, &prefix(k))),
        cbic_path: vec![0.0],
        n_train: 0,
        warnings: vec![],
    }
}


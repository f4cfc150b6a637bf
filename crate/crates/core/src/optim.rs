//! Quasi-Newton minimization (BFGS with a strong-Wolfe line search).

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `fg`, which returns the objective and writes its gradient.
///
/// Every accepted step strictly decreases the objective, so the returned
/// value never exceeds the value at `x0`.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut h = identity(n);
    let mut first = true;
    let mut fresh_hessian = true;

    for iter in 0..opts.max_iter {
        let gn = inf_norm(&g);
        if gn < opts.grad_tol {
            return Minimum {
                x,
                f,
                grad_norm: gn,
                iterations: iter,
                converged: true,
            };
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            // Curvature information went stale; fall back to steepest descent.
            h = identity(n);
            fresh_hessian = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let alpha0 = if first { (1.0 / inf_norm(&d)).min(1.0) } else { 1.0 };
        first = false;

        let Some((alpha, f_new, x_new, g_new)) = wolfe_search(&mut fg, &x, f, &g, &d, slope, alpha0) else {
            if fresh_hessian {
                break;
            }
            h = identity(n);
            fresh_hessian = true;
            first = true;
            continue;
        };
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x = x_new;
        f = f_new;
        g = g_new;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            fresh_hessian = false;
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }
    let gn = inf_norm(&g);
    Minimum {
        x,
        f,
        grad_norm: gn,
        iterations: opts.max_iter,
        converged: gn < opts.grad_tol,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

type Probe = (f64, f64, Vec<f64>, Vec<f64>);

fn wolfe_search<F>(
    fg: &mut F,
    x: &[f64],
    f0: f64,
    _g0: &[f64],
    d: &[f64],
    slope0: f64,
    alpha0: f64,
) -> Option<Probe>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let n = x.len();
    let mut eval = |alpha: f64| -> Probe {
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let mut ga = vec![0.0; n];
        let fa = fg(&xa, &mut ga);
        let sa = dot(&ga, d);
        (fa, sa, xa, ga)
    };

    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut s_prev = slope0;
    let mut alpha = alpha0;
    for i in 0..40 {
        let (fa, sa, xa, ga) = eval(alpha);
        if !fa.is_finite() {
            alpha = 0.5 * (a_prev + alpha);
            continue;
        }
        if fa > f0 + C1 * alpha * slope0 || (i > 0 && fa >= f_prev) {
            return zoom(&mut eval, f0, slope0, (a_prev, f_prev, s_prev), (alpha, fa, sa));
        }
        if sa.abs() <= -C2 * slope0 {
            return Some((alpha, fa, xa, ga));
        }
        if sa >= 0.0 {
            return zoom(&mut eval, f0, slope0, (alpha, fa, sa), (a_prev, f_prev, s_prev));
        }
        a_prev = alpha;
        f_prev = fa;
        s_prev = sa;
        alpha *= 2.0;
    }
    None
}

fn zoom<E>(eval: &mut E, f0: f64, slope0: f64, lo: (f64, f64, f64), hi: (f64, f64, f64)) -> Option<Probe>
where
    E: FnMut(f64) -> Probe,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let (mut a_lo, mut f_lo, mut s_lo) = lo;
    let (mut a_hi, mut f_hi, _) = hi;
    let mut best: Option<Probe> = None;
    for _ in 0..60 {
        // Safeguarded quadratic interpolation from the low end.
        let da = a_hi - a_lo;
        let denom = 2.0 * (f_hi - f_lo - s_lo * da);
        let mut a = if denom.abs() > 1e-300 { a_lo - s_lo * da * da / denom } else { f64::NAN };
        let (lo_b, hi_b) = (a_lo.min(a_hi), a_lo.max(a_hi));
        let margin = 0.1 * (hi_b - lo_b);
        if !a.is_finite() || a < lo_b + margin || a > hi_b - margin {
            a = 0.5 * (a_lo + a_hi);
        }
        let (fa, sa, xa, ga) = eval(a);
        if fa.is_finite() && fa < f0 && best.as_ref().is_none_or(|b| fa < b.0) {
            best = Some((fa, a, xa.clone(), ga.clone()));
        }
        if !fa.is_finite() || fa > f0 + C1 * a * slope0 || fa >= f_lo {
            a_hi = a;
            f_hi = if fa.is_finite() { fa } else { f64::MAX };
        } else {
            if sa.abs() <= -C2 * slope0 {
                return Some((a, fa, xa, ga));
            }
            if sa * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
            }
            a_lo = a;
            f_lo = fa;
            s_lo = sa;
        }
        if (a_hi - a_lo).abs() < 1e-16 * a_lo.abs().max(1e-10) {
            break;
        }
    }
    // Accept the best sufficient-decrease point if the curvature test never held.
    best.map(|(fa, a, xa, ga)| (a, fa, xa, ga))
}

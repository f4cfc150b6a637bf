mod common;

use bivpost::copula::{pc_simulate, Family, FamilyMenu, PairCopula, Rotation};
use bivpost::rng::stream;
use bivpost::special::{gauss_legendre, norm_quantile};
use bivpost::yvine::{yvine_fit, yvine_fit_with, InjectedMargins, Margin, YVineConfig};
use common::{bvn_logpdf, cholesky, gaussian_conditional, gaussian_yvine, random_corr};
use rand::Rng;
use rand_distr::StandardNormal;

fn random_margins<R: Rng>(rng: &mut R, d: usize) -> Vec<(f64, f64)> {
    (0..d).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(0.5..3.0))).collect()
}

#[test]
fn gaussian_yvine_matches_conditional_normal() {
    let mut rng = stream(21, &[]);
    for k in [0usize, 1, 3] {
        let r = random_corr(&mut rng, k + 2);
        let mg = random_margins(&mut rng, k + 2);
        let model = gaussian_yvine(&r, &mg);
        model.validate().unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let x: Vec<f64> = z.iter().enumerate().map(|(j, v)| mg[j + 2].0 + mg[j + 2].1 * v).collect();
            let (m, c) = gaussian_conditional(&r, &z);
            // Grid over the conditional mean +- 3 conditional sds.
            let (du, dv) = (c[0][0].sqrt(), c[1][1].sqrt());
            for i in 0..21 {
                for j in 0..21 {
                    let zu = m[0] + du * (-3.0 + 0.3 * i as f64);
                    let zv = m[1] + dv * (-3.0 + 0.3 * j as f64);
                    let y = [mg[0].0 + mg[0].1 * zu, mg[1].0 + mg[1].1 * zv];
                    let want = bvn_logpdf([zu, zv], m, c) - (mg[0].1 * mg[1].1).ln();
                    let got = model.logdensity(y, &x).unwrap();
                    worst = worst.max((got - want).abs());
                }
            }
        }
        assert!(worst < 1e-6, "k={k}: {worst}");
    }
}

#[test]
fn gaussian_yvine_samples_match_conditional_moments() {
    let mut rng = stream(22, &[]);
    let r = random_corr(&mut rng, 4);
    let mg = random_margins(&mut rng, 4);
    let model = gaussian_yvine(&r, &mg);
    let z = [0.7, -1.1];
    let x = [mg[2].0 + mg[2].1 * z[0], mg[3].0 + mg[3].1 * z[1]];
    let (m, c) = gaussian_conditional(&r, &z);
    let n = 40_000;
    let s = model.sample(&x, n, 5).unwrap();
    let nf = n as f64;
    let zs: Vec<[f64; 2]> = s.iter().map(|y| [(y[0] - mg[0].0) / mg[0].1, (y[1] - mg[1].0) / mg[1].1]).collect();
    let mean = [zs.iter().map(|v| v[0]).sum::<f64>() / nf, zs.iter().map(|v| v[1]).sum::<f64>() / nf];
    let tol = 5.0 / nf.sqrt();
    for a in 0..2 {
        assert!((mean[a] - m[a]).abs() < tol, "mean {a}: {} vs {}", mean[a], m[a]);
        for b in 0..2 {
            let cov = zs.iter().map(|v| (v[a] - mean[a]) * (v[b] - mean[b])).sum::<f64>() / (nf - 1.0);
            assert!((cov - c[a][b]).abs() < tol, "cov {a}{b}: {cov} vs {}", c[a][b]);
        }
    }
}

/// Responses from a Clayton/Gumbel construction in the first two
/// covariates; the remaining covariates are noise.
fn copula_data(seed: u64, n: usize, p: usize, signal: f64) -> (Vec<[f64; 2]>, Vec<Vec<f64>>) {
    let mut rng = stream(seed, &[]);
    let branch = PairCopula::new(Family::Clayton, Rotation::R0, vec![signal]).unwrap();
    let top = PairCopula::new(Family::Gumbel, Rotation::R0, vec![1.6]).unwrap();
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let u1 = bivpost::special::norm_cdf(row[0]);
        let (w1, w2) = pc_simulate(&top, 1, &mut rng);
        let a = branch.hinv2(w1[0], u1);
        let b = branch.hinv2(w2[0], u1);
        y.push([norm_quantile(a) * 2.0 + 1.0, norm_quantile(b)]);
        x.push(row);
    }
    (y, x)
}

#[test]
fn fitted_density_integrates_to_one() {
    let (y, x) = copula_data(31, 600, 4, 2.0);
    let names = ["a", "b", "c", "d"];
    let model = yvine_fit(&y, &x, &names, &YVineConfig::default()).unwrap();
    assert!(model.selected.contains(&0));
    for w in model.cbic_path.windows(2) {
        assert!(w[1] < w[0]);
    }
    let (nodes, weights) = gauss_legendre(8);
    let range = |m: &Margin| (m.quantile(1e-8).unwrap(), m.quantile(1.0 - 1e-8).unwrap());
    let grid = |(lo, hi): (f64, f64), panels: usize| {
        let h = (hi - lo) / panels as f64;
        let mut pts = Vec::new();
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * h;
            for (t, wt) in nodes.iter().zip(&weights) {
                pts.push((mid + 0.5 * h * t, 0.5 * h * wt));
            }
        }
        pts
    };
    let gu = grid(range(&model.margin_u), 80);
    let gv = grid(range(&model.margin_v), 80);
    let mut rng = stream(32, &[]);
    for _ in 0..10 {
        let xs: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let w = model.conditional_covariate_pits(&xs).unwrap();
        assert_eq!(w.len(), model.k());
        let mut total = 0.0;
        for &(a, wa) in &gu {
            for &(b, wb) in &gv {
                total += wa * wb * model.logdensity([a, b], &xs).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 5e-3, "integral {total} at {xs:?}");
    }
}

/// Independent covariates: the selection stays empty. Gaussian branch
/// copulas carry one parameter each and cannot be independence, so a trial
/// enters only when both branch log-likelihood gains together beat 2 ln N.
#[test]
fn null_covariates_give_empty_selection() {
    let names: Vec<String> = (0..15).map(|j| format!("x{j}")).collect();
    let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let cfg = YVineConfig {
        menu: FamilyMenu::G,
        ..YVineConfig::default()
    };
    let mut empty = 0;
    for rep in 0..50u64 {
        let mut rng = stream(40, &[rep]);
        let n = 800;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..15).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [a, 0.6 * a + 0.8 * b]
            })
            .collect();
        let m = yvine_fit(&y, &x, &names, &cfg).unwrap();
        if m.k() == 0 {
            empty += 1;
        }
    }
    assert!(empty >= 45, "empty selection in {empty} of 50");
}

#[test]
fn dominant_covariate_selected_first_and_order_is_label_invariant() {
    let names: Vec<String> = (0..15).map(|j| format!("x{j}")).collect();
    let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut first = 0;
    let reps = 20;
    for rep in 0..reps {
        let (y, x) = copula_data(50 + rep, 400, 15, 4.0);
        let m = yvine_fit(&y, &x, &names, &YVineConfig::default()).unwrap();
        if m.selected.first() == Some(&0) {
            first += 1;
        }
        if rep == 0 {
            // Reverse the columns: the selection must follow the relabeling.
            let xr: Vec<Vec<f64>> = x.iter().map(|r| r.iter().rev().copied().collect()).collect();
            let mr = yvine_fit(&y, &xr, &names, &YVineConfig::default()).unwrap();
            let mapped: Vec<usize> = mr.selected.iter().map(|&j| 14 - j).collect();
            assert_eq!(mapped, m.selected);
        }
    }
    assert!(first as f64 >= 0.95 * reps as f64, "selected first in {first} of {reps}");
}

#[test]
fn injected_margins_are_used_and_gaussian_fit_recovers_density() {
    let mut rng = stream(60, &[]);
    let r = random_corr(&mut rng, 3);
    let l = cholesky(&r);
    let n = 4000;
    let mut y = Vec::new();
    let mut x = Vec::new();
    for _ in 0..n {
        let e: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = (0..3).map(|i| (0..=i).map(|k| l[i][k] * e[k]).sum()).collect();
        y.push([z[0], z[1]]);
        x.push(vec![z[2]]);
    }
    let std = || Margin::Normal { mean: 0.0, sd: 1.0 };
    let inj = InjectedMargins {
        u: std(),
        v: std(),
        covariates: vec![std()],
    };
    let cfg = YVineConfig {
        menu: FamilyMenu::G,
        ..YVineConfig::default()
    };
    let m = yvine_fit_with(&y, &x, &["x"], &cfg, Some(inj)).unwrap();
    assert_eq!(m.margin_u, std());
    m.validate().unwrap();
    let (mean, cov) = gaussian_conditional(&r, &[0.5]);
    let got = m.logdensity([mean[0], mean[1]], &[0.5]).unwrap();
    let want = bvn_logpdf(mean, mean, cov);
    assert!((got - want).abs() < 0.1, "{got} vs {want}");
}

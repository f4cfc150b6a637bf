mod common;

use bivpost::copula::{pc_fit, pc_simulate, Family, FamilyMenu, PairCopula, Rotation};
use common::*;

#[test]
fn clayton_density_is_mixed_partial_of_cdf() {
    let c = PairCopula::new(Family::Clayton, Rotation::R0, vec![2.0]).unwrap();
    let (u, v, h) = (0.3, 0.7, 1e-4);
    let num = (cdf(&c, u + h, v + h) - cdf(&c, u + h, v - h) - cdf(&c, u - h, v + h) + cdf(&c, u - h, v - h))
        / (4.0 * h * h);
    assert!((c.pdf(u, v) / num - 1.0).abs() < 1e-5);
}

#[test]
fn kernels_round_trip_and_match_numeric_derivatives() {
    for c in copula_zoo() {
        let rt = max_roundtrip_error(&c);
        assert!(rt < 1e-8, "{} round trip {rt:e}", c.label());
        let dh = max_h_vs_numeric(&c);
        assert!(dh < 1e-6, "{} h vs dC {dh:e}", c.label());
    }
}

#[test]
fn densities_have_uniform_margins() {
    for c in copula_zoo() {
        let e = max_margin_error(&c);
        assert!(e < 1e-3, "{} margin error {e:e}", c.label());
    }
}

#[test]
fn rotation_180_reflects_density() {
    for c in copula_zoo().into_iter().filter(|c| c.rotation == Rotation::R0) {
        let mut r = c.clone();
        r.rotation = Rotation::R180;
        for &u in &grid19() {
            for &v in &grid19() {
                assert!((r.pdf(u, v) - c.pdf(1.0 - u, 1.0 - v)).abs() < 1e-12 * c.pdf(1.0 - u, 1.0 - v).max(1.0));
            }
        }
    }
}

#[test]
fn clayton_tau_matches_brute_force() {
    let c = PairCopula::new(Family::Clayton, Rotation::R0, vec![2.0]).unwrap();
    let mut rng = bivpost::rng::stream(2024, &[]);
    let (u, v) = pc_simulate(&c, 1_000_000, &mut rng);
    let tau = bivpost::copula::kendall_tau(&u, &v);
    // Standard error of tau-hat at n = 1e6 is below 1e-3.
    assert!((tau - 0.5).abs() < 3e-3, "{tau}");
    assert!((c.tau() - 0.5).abs() < 1e-15);
}

#[test]
fn gaussian_fit_selection_rate() {
    let truth = PairCopula::gaussian(0.6).unwrap();
    let mut hits = 0;
    for rep in 0..50u64 {
        let mut rng = bivpost::rng::stream(500 + rep, &[]);
        let (u, v) = pc_simulate(&truth, 2000, &mut rng);
        let f = pc_fit(&u, &v, FamilyMenu::P).unwrap();
        let ok_family = f.family == Family::Gaussian || (f.family == Family::StudentT && f.params[1] > 15.0);
        if ok_family && (f.params[0] - 0.6).abs() <= 0.05 {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn independence_selected_for_independent_uniforms() {
    use rand::Rng;
    let mut hits = 0;
    for rep in 0..50u64 {
        let mut rng = bivpost::rng::stream(900 + rep, &[]);
        let u: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let v: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        if pc_fit(&u, &v, FamilyMenu::P).unwrap().family == Family::Independence {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50");
}

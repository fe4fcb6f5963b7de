use mvlab::coefficients::catalog::{CatalogParams, Registry};
use mvlab::coefficients::{CoefficientSet, FnPairwise, PathAccess};
use mvlab::error::Result;
use mvlab::girsanov::{companion_seed, martingale_check, tv_stability_check, tv_stability_rhs, StabilityReport};
use mvlab::measure::WeightFunction;
use mvlab::solver::{simulate, InitialLaw, ParticleEnsemble, SimConfig};

fn ou(theta: f64, c: f64) -> CoefficientSet {
    let p = CatalogParams {
        theta,
        c,
        ..CatalogParams::default()
    };
    Registry::builtin().build("OU-attraction", &p).unwrap()
}

fn ensemble(coeffs: &CoefficientSet, init: &InitialLaw, n: usize, t: f64, seed: u64) -> ParticleEnsemble {
    simulate(coeffs, init, &SimConfig::new(n, 0.01, t, seed)).unwrap()
}

fn gaussian() -> InitialLaw {
    InitialLaw::Gaussian {
        mean: vec![0.0],
        sd: vec![0.5],
    }
}

#[test]
fn constant_shift_matches_hand_formula() {
    let e = ensemble(&ou(0.0, 0.0), &InitialLaw::ConstantPoint(vec![0.0]), 1, 1.0, 3);
    let c = 0.3;
    let zero = |_: f64, _: &dyn PathAccess, out: &mut [f64]| -> Result<()> {
        out[0] = 0.0;
        Ok(())
    };
    let shift = move |_: f64, _: &dyn PathAccess, out: &mut [f64]| -> Result<()> {
        out[0] = c;
        Ok(())
    };
    for t in [0.25, 0.5, 1.0] {
        let r = tv_stability_rhs([&e, &e], 1, &zero, &shift, &WeightFunction::unit(), t).unwrap();
        let expect = 2.0 * c * c * t + 2.0 * c * t.sqrt();
        assert!((r.value - expect).abs() < 1e-12, "t={t}: {} vs {expect}", r.value);
    }
}

/// `E[φ I] + sqrt(E φ²) sqrt(E I)` per ensemble, by plain loops.
fn direct_term(e: &ParticleEnsemble, b1: impl Fn(f64) -> f64, b2: impl Fn(f64) -> f64, t: f64) -> f64 {
    let end = e.index_of(t).unwrap();
    let n = e.n() as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in 0..e.n() {
        let mut integral = 0.0;
        for k in 0..end {
            let x = e.positions(k)[p];
            integral += (b1(x) - b2(x)).powi(2) * (e.times()[k + 1] - e.times()[k]);
        }
        let y = e.positions(end)[p];
        let phi = 1.0 + y * y;
        a += phi * integral;
        b += phi * phi;
        c += integral;
    }
    a / n + (b / n).sqrt() * (c / n).sqrt()
}

#[test]
fn rhs_matches_direct_summation() {
    let e1 = ensemble(&ou(1.0, 0.0), &gaussian(), 50, 0.5, 1);
    let e2 = ensemble(&ou(0.5, 0.2), &gaussian(), 50, 0.5, 2);
    let b1 = |_: f64, p: &dyn PathAccess, out: &mut [f64]| -> Result<()> {
        out[0] = -p.current()[0];
        Ok(())
    };
    let b2 = |_: f64, p: &dyn PathAccess, out: &mut [f64]| -> Result<()> {
        out[0] = -0.5 * p.current()[0] + 0.2;
        Ok(())
    };
    let phi = WeightFunction::polynomial(2.0);
    for t in [0.1, 0.3, 0.5] {
        let r = tv_stability_rhs([&e1, &e2], 1, &b1, &b2, &phi, t).unwrap();
        let f1 = |x: f64| -x;
        let f2 = |x: f64| -0.5 * x + 0.2;
        let expect = direct_term(&e1, f1, f2, t) + direct_term(&e2, f1, f2, t);
        assert!(
            (r.value - expect).abs() <= 1e-12 * expect.max(1.0),
            "t={t}: {} vs {expect}",
            r.value
        );
    }
}

#[test]
fn rhs_grows_with_time() {
    let e1 = ensemble(&ou(1.0, 0.0), &gaussian(), 2000, 1.0, 5);
    let e2 = ensemble(&ou(1.0, 0.2), &gaussian(), 2000, 1.0, 6);
    let b1 = |_: f64, p: &dyn PathAccess, out: &mut [f64]| -> Result<()> {
        out[0] = -p.current()[0];
        Ok(())
    };
    let b2 = |_: f64, p: &dyn PathAccess, out: &mut [f64]| -> Result<()> {
        out[0] = -p.current()[0] + 0.2;
        Ok(())
    };
    let phi = WeightFunction::polynomial(2.0);
    let values: Vec<f64> = [0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&t| tv_stability_rhs([&e1, &e2], 1, &b1, &b2, &phi, t).unwrap().value)
        .collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0]), "{values:?}");
}

fn check(c1: &CoefficientSet, c2: &CoefficientSet, seeds: [u64; 2], n: usize) -> StabilityReport {
    tv_stability_check(
        [c1, c2],
        &gaussian(),
        &SimConfig::new(n, 0.01, 1.0, 0),
        seeds,
        &WeightFunction::polynomial(2.0),
        &[0.25, 0.5, 1.0],
        0.1,
    )
    .unwrap()
}

#[test]
fn swapping_systems_swaps_nothing() {
    let (a, b) = (ou(1.0, 0.0), ou(1.0, 0.3));
    let fwd = check(&a, &b, [7, companion_seed(7)], 300);
    let rev = check(&b, &a, [companion_seed(7), 7], 300);
    for (x, y) in fwd.rows.iter().zip(&rev.rows) {
        assert_eq!(x.lhs, y.lhs);
        assert_eq!(x.rhs, y.rhs);
        assert_eq!(x.bound, y.bound);
    }
}

#[test]
fn identical_systems_differ_only_by_sampling() {
    let a = ou(1.0, 0.0);
    let r = check(&a, &a, [11, companion_seed(11)], 2000);
    assert!(r.pass);
    for row in &r.rows {
        assert_eq!(row.rhs, 0.0);
        assert!(row.lhs <= row.binning_slack + 3.0 * row.lhs_se, "{row:?}");
    }
}

#[test]
fn tail_perturbation_is_bounded() {
    let base = |_: f64, x: &[f64], _: &[f64], out: &mut [f64]| out[0] = -x[0];
    let bumped = |_: f64, x: &[f64], _: &[f64], out: &mut [f64]| {
        out[0] = -x[0] + if x[0].abs() > 0.5 { 0.5 } else { 0.0 };
    };
    let unit = |_: f64, _: &[f64], _: &[f64], out: &mut [f64]| out[0] = 1.0;
    let a = CoefficientSet::pairwise(FnPairwise::new(1, 1, base, unit));
    let b = CoefficientSet::pairwise(FnPairwise::new(1, 1, bumped, unit));
    let r = check(&a, &b, [21, companion_seed(21)], 800);
    assert!(r.pass, "{:?}", r.rows);
    assert!(r.rows.iter().all(|row| row.rhs > 0.0));
}

#[test]
fn mismatched_dispersions_are_rejected() {
    let p = CatalogParams {
        sigma: 2.0,
        ..CatalogParams::default()
    };
    let loud = Registry::builtin().build("OU-attraction", &p).unwrap();
    let quiet = ou(1.0, 0.0);
    let err = tv_stability_check(
        [&quiet, &loud],
        &gaussian(),
        &SimConfig::new(10, 0.01, 0.1, 0),
        [1, 2],
        &WeightFunction::unit(),
        &[0.1],
        0.1,
    );
    assert!(err.is_err());
}

#[test]
fn likelihood_is_a_martingale_for_bounded_drift() {
    for c in [0.5, 1.0] {
        let drift = move |_: f64, x: &[f64], out: &mut [f64]| out[0] = c * x[0].sin();
        let r = martingale_check(&drift, 1, 4000, 0.01, 1.0, 9, 20).unwrap();
        assert!(r.pass, "c={c}: mean {} se {}", r.mean, r.se);
    }
}

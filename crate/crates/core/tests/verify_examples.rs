//! Worked examples for the population-level checks, with independent oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustmsd::verify::*;
use robustmsd::Error;

fn pm_one_around(a: f64) -> DiscreteDist {
    DiscreteDist::uniform(&[a - 1.0, a + 1.0]).unwrap()
}

/// Minimises `beta b + lambda E[sqrt(d^2 + b^2) - b]` by ternary search in log b.
fn scale_by_direct_search(dist: &DiscreteDist, a: f64, beta: f64, lambda: f64) -> f64 {
    let f = |t: f64| {
        let b = t.exp();
        beta * b + lambda * dist.atoms().iter().map(|&(v, p)| p * ((v - a).hypot(b) - b)).sum::<f64>()
    };
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    (0.5 * (lo + hi)).exp()
}

#[test]
fn two_point_scale_closed_form() {
    for ratio in [0.05, 0.2, 0.5, 0.8] {
        let b = optimal_scale(&pm_one_around(0.0), 0.0, ratio, 1.0).unwrap();
        let t = 1.0 - ratio;
        let closed = t / (1.0 - t * t).sqrt();
        assert!((b - closed).abs() <= 1e-10 * closed, "{ratio}: {b} vs {closed}");
    }
}

#[test]
fn scale_grows_as_beta_shrinks() {
    let d = pm_one_around(0.0);
    let b: Vec<f64> = [1e-1, 1e-2, 1e-3].iter().map(|&r| optimal_scale(&d, 0.0, r, 1.0).unwrap()).collect();
    assert!(b[0] < b[1] && b[1] < b[2]);
}

#[test]
fn scale_matches_direct_minimisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 200 {
        let dist = random_dist(&mut rng, 6);
        let a = rng.random_range(-3.0..3.0);
        let lambda = rng.random_range(0.2..2.0);
        let beta = lambda * rng.random_range(0.05..0.95);
        let Ok(b) = optimal_scale(&dist, a, beta, lambda) else { continue };
        let oracle = scale_by_direct_search(&dist, a, beta, lambda);
        assert!((b - oracle).abs() <= 1e-6 * oracle, "{b} vs {oracle}");
        // the condition's left side brackets the target on either side of the root
        let target = 1.0 - beta / lambda;
        assert!(scale_condition(&dist, a, 0.5 * b) < target && scale_condition(&dist, a, 2.0 * b) > target);
        checked += 1;
    }
}

#[test]
fn single_atom_at_threshold_is_rejected() {
    let d = DiscreteDist::new(vec![(1.5, 1.0)]).unwrap();
    assert!(matches!(optimal_scale(&d, 1.5, 0.5, 1.0), Err(Error::Degenerate(_))));
    assert!(optimal_scale(&d, 1.5, 1.0, 1.0).is_err());
}

#[test]
fn scale_bounds_examples() {
    let r = check_scale_bounds(&pm_one_around(0.0), 0.0, 0.5, 1.0).unwrap();
    assert_eq!(r.lower, 0.0);
    assert_eq!(r.upper, 1.0);
    assert!((r.b_squared - 1.0 / 3.0).abs() < 1e-10 && r.holds);
    let three = DiscreteDist::uniform(&[-1.0, 0.0, 1.0]).unwrap();
    assert!(check_scale_bounds(&three, 0.0, 0.1, 1.0).unwrap().holds);
}

#[test]
fn scale_bounds_hold_on_random_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    while checked < 200 {
        let dist = random_dist(&mut rng, 8);
        let a = rng.random_range(-3.0..3.0);
        let beta = rng.random_range(0.01..0.99);
        match check_scale_bounds(&dist, a, beta, 1.0) {
            Ok(r) => {
                assert!(r.holds, "{r:?}");
                checked += 1;
            }
            Err(Error::Degenerate(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn limit_examples() {
    let r = check_scale_optimized_limit(&pm_one_around(0.0), 0.0, 1.0, 0.0).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!((r.values[3] - 2f64.sqrt()).abs() < 1e-6);

    let constant = DiscreteDist::new(vec![(3.0, 1.0)]).unwrap();
    let r = check_scale_optimized_limit(&constant, 3.0, 1.0, 0.7).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!((r.values[3] - 2.1).abs() < 1e-12);

    let r = check_scale_optimized_limit(&pm_one_around(3.0), 3.0, 1.0, 1.0).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert_eq!((r.lower, r.upper), (3.5, 7.0));
    assert!((r.values[3] - (3.0 + 2f64.sqrt())).abs() < 1e-6);
}

fn gaussian_config(trials: usize, seed: u64) -> ConcentrationConfig {
    ConcentrationConfig {
        generator: LossGenerator::Gaussian { mean: 0.0, sd: 1.0 },
        b: 20.0,
        alpha: 0.0,
        lambda: 1.0,
        n: 2000,
        delta: 0.05,
        trials,
        seed,
    }
}

#[test]
fn concentration_center_and_determinism() {
    let r = check_location_concentration(&gaussian_config(50, 3)).unwrap();
    assert_eq!(r.center, 0.0);
    let again = check_location_concentration(&gaussian_config(50, 3)).unwrap();
    assert_eq!(r.coverage, again.coverage);
    assert!(r.passed);
}

#[test]
fn lognormal_moments() {
    let g = LossGenerator::LogNormal { mu: 0.0, sigma: 1.0 };
    let e = 1f64.exp();
    assert!((g.mean() - e.sqrt()).abs() < 1e-15);
    assert!((g.variance() - e * (e - 1.0)).abs() < 1e-12);
}

#[test]
fn stationarity_two_atoms() {
    let (u, v) = (vec![1.0, -2.0], vec![0.5, 3.0]);
    let atoms = vec![
        GradAtom { loss: 0.0, grad: u, prob: 0.5 },
        GradAtom { loss: 2.0, grad: v.clone(), prob: 0.5 },
    ];
    let r = check_stationarity_equivalence(&atoms).unwrap();
    assert_eq!(r.mv_grad, v);
    assert!(r.passed);
}

#[test]
fn stationarity_random_five_atoms() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let dist = random_dist_with(&mut rng, 5);
        let atoms: Vec<GradAtom> = dist
            .atoms()
            .iter()
            .map(|&(loss, prob)| GradAtom {
                loss,
                grad: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                prob,
            })
            .collect();
        assert!(check_stationarity_equivalence(&atoms).unwrap().passed);
    }
}

#[test]
fn pair_optimality_examples() {
    let sym = DiscreteDist::uniform(&[1.0, 2.0, 3.0]).unwrap();
    let r = check_pair_optimality(&sym, 0.0, 0.3, 1.0).unwrap();
    assert!(r.passed && (r.a - 2.0).abs() < 1e-9, "{r:?}");

    let skew = DiscreteDist::uniform(&[0.0, 0.0, 10.0]).unwrap();
    let r = check_pair_optimality(&skew, 0.01, 0.05, 1.0).unwrap();
    assert!(r.passed, "{r:?}");
    assert!(r.residual_a.abs() < 1e-8 && r.residual_b.abs() < 1e-8);

    // alpha close to lambda needs beta close to lambda, and then every atom's
    // mass must stay below 1 - beta/lambda
    assert!(matches!(check_pair_optimality(&skew, 0.99, 0.9, 1.0), Err(Error::Degenerate(_))));
    let spread: Vec<f64> = (0..10).map(f64::from).collect();
    let wide = DiscreteDist::uniform(&spread).unwrap();
    let r = check_pair_optimality(&wide, 0.99, 0.88, 1.0).unwrap();
    assert!(r.passed, "{r:?}");
    assert!(r.a < 0.0, "{r:?}");
}

//! End-to-end optimizer behaviour on small data sets.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robustmsd::criteria::{schedule_params, CriterionParams};
use robustmsd::data::{generate_2d_outlier, shuffle_split, SynthConfig};
use robustmsd::optimizer::{checkpoint_metrics, initial_state, run, zero_weights, OptConfig, RNG_ALGORITHM};
use robustmsd::{Dataset, Split};

fn all_criteria(n: usize) -> Vec<CriterionParams> {
    vec![
        schedule_params(n, 0.9, (n as f64).ln() / (n as f64).sqrt()).unwrap(),
        CriterionParams::erm(),
        CriterionParams::cvar(0.5).unwrap(),
        CriterionParams::chisq_dro(0.5).unwrap(),
    ]
}

fn synthetic() -> Dataset {
    generate_2d_outlier(&SynthConfig::default()).unwrap()
}

#[test]
fn full_batch_sgd_equals_batch_gd() {
    let ds = synthetic();
    for params in all_criteria(ds.n()) {
        let init = initial_state(&ds, zero_weights(&ds)).unwrap();
        let gd = run(&params, init.clone(), &ds, &OptConfig::batch(0.05, 40)).unwrap();
        let sgd = run(&params, init, &ds, &OptConfig::stochastic(0.05, 40, ds.n(), 9)).unwrap();
        assert_eq!(gd.final_state, sgd.final_state, "{}", params.label());
    }
}

#[test]
fn sgd_is_deterministic_given_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ds = shuffle_split(&common::random_dataset(&mut rng, 60, 3, 3), 1).unwrap();
    for params in all_criteria(48) {
        let init = initial_state(&ds, zero_weights(&ds)).unwrap();
        let cfg = OptConfig::stochastic(0.1, 5, 8, 42);
        let a = run(&params, init.clone(), &ds, &cfg).unwrap();
        let b = run(&params, init.clone(), &ds, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.final_state, b.final_state);
        let c = run(&params, init, &ds, &OptConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.final_state, c.final_state, "{}", params.label());
        assert_eq!(a.rng_algorithm, RNG_ALGORITHM);
    }
}

#[test]
fn stored_checkpoints_reproduce_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = shuffle_split(&common::random_dataset(&mut rng, 50, 2, 2), 2).unwrap();
    for params in all_criteria(40) {
        let init = initial_state(&ds, zero_weights(&ds)).unwrap();
        let r = run(&params, init, &ds, &OptConfig::stochastic(0.2, 6, 7, 1)).unwrap();
        let mut recomputed = Vec::new();
        for (idx, state) in &r.checkpoints {
            assert!(state.b > 0.0);
            recomputed.extend(checkpoint_metrics(*idx, state, &ds, &params).unwrap());
        }
        assert_eq!(recomputed, r.trajectory);
        // three splits per epoch
        assert_eq!(r.trajectory.len(), 6 * 3);
        for rec in &r.trajectory {
            assert!(rec.mean_sd >= rec.mean_loss);
            assert!((0.0..=1.0).contains(&rec.error_rate));
        }
    }
}

#[test]
fn batch_checkpoint_cadence() {
    let ds = synthetic();
    let params = all_criteria(ds.n())[0];
    let init = initial_state(&ds, zero_weights(&ds)).unwrap();
    let r = run(&params, init, &ds, &OptConfig::batch(0.01, 1000)).unwrap();
    let idx: Vec<usize> = r.trajectory.iter().map(|t| t.checkpoint).collect();
    assert_eq!(idx, (1..=10).map(|k| 100 * k).collect::<Vec<_>>());
    assert!(r.trajectory.iter().all(|t| t.split == Split::Train && t.b.unwrap() > 0.0));
}

#[test]
fn batch_larger_than_training_set_is_rejected() {
    let ds = synthetic();
    let init = initial_state(&ds, zero_weights(&ds)).unwrap();
    assert!(run(&CriterionParams::erm(), init, &ds, &OptConfig::stochastic(0.1, 1, 101, 0)).is_err());
}

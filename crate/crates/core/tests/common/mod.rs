#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use robustmsd::Dataset;

/// Dense dataset with features in [-2, 2) and uniform labels.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, n_classes: usize) -> Dataset {
    let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let labels = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    Dataset::new(features, labels, n_classes, "random").unwrap()
}

/// Central difference of `f` at `x` along every coordinate.
pub fn central_diff(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|j| {
            buf[j] = x[j] + step;
            let up = f(&buf);
            buf[j] = x[j] - step;
            let down = f(&buf);
            buf[j] = x[j];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|u - v| / max(|u|, |v|)` in the Euclidean norm.
pub fn rel_err(u: &[f64], v: &[f64]) -> f64 {
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = nu.max(nv);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

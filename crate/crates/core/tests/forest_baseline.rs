//! Decision-forest baseline on informative and on shuffled labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerid_core::forest::fit_forest;
use steerid_core::ForestConfig;

fn blobs(n_per_class: usize, n_classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in 0..n_classes {
        for _ in 0..n_per_class {
            x.push((0..7).map(|j| rng.random_range(-1.0..1.0) + if j == c { 1.5 } else { 0.0 }).collect());
            y.push(c);
        }
    }
    (x, y)
}

fn cfg(seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: 60,
        seed,
        ..ForestConfig::default()
    }
}

#[test]
fn informative_features_beat_chance() {
    let (x, y) = blobs(150, 4, 1);
    let oob = fit_forest(&x, &y, 4, &cfg(2)).unwrap().oob_accuracy.unwrap();
    assert!(oob > 0.8, "oob {}", oob);
}

#[test]
fn shuffled_labels_give_chance_oob_accuracy() {
    let (x, mut y) = blobs(150, 4, 3);
    y.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let oob = fit_forest(&x, &y, 4, &cfg(5)).unwrap().oob_accuracy.unwrap();
    let sigma = (0.25f64 * 0.75 / 600.0).sqrt();
    assert!((oob - 0.25).abs() <= 4.0 * sigma, "oob {}", oob);
}

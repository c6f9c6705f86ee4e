//! Backpropagation through time against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerid_core::features::FeatureStats;
use steerid_core::gru::{gradient_check, init_params, DropoutMasks};
use steerid_core::{Activation, ModelConfig, ModelParams, SegmentMatrix};

const HIDDEN: usize = 8;
const WINDOWS: usize = 12;
const DIM: usize = 6;

fn model(seed: u64, activation: Activation) -> ModelParams {
    let cfg = ModelConfig {
        hidden: HIDDEN,
        activation,
        ..ModelConfig::new(2, DIM)
    };
    let mut p = init_params(&mut ChaCha8Rng::seed_from_u64(seed), cfg).unwrap();
    p.stats = Some(FeatureStats {
        mean: vec![0.1; DIM],
        scale: vec![0.8; DIM],
    });
    p
}

fn segment(label: usize, rng: &mut ChaCha8Rng) -> SegmentMatrix {
    SegmentMatrix {
        label,
        n_windows: WINDOWS,
        dim: DIM,
        data: (0..WINDOWS * DIM).map(|_| rng.random_range(-1.5..1.5)).collect(),
    }
}

fn check(seed: u64, activation: Activation, dropout: bool) {
    let params = model(seed, activation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let a = segment(0, &mut rng);
    let b = segment(1, &mut rng);
    let mask = |rng: &mut ChaCha8Rng| dropout.then(|| DropoutMasks::sample(rng, 2 * HIDDEN, 0.7));
    let examples = vec![(&a, 0, 1.0, mask(&mut rng)), (&b, 1, 1.0, mask(&mut rng))];
    let r = gradient_check(&params, &examples, 1e-4, 1e-8).unwrap();
    assert_eq!(r.n_checked, params.weights.n_params());
    assert!(
        r.max_rel_error < 1e-4,
        "seed {seed} {activation:?} dropout {dropout}: rel {} abs {}",
        r.max_rel_error,
        r.max_abs_error
    );
}

#[test]
fn sigmoid_candidate_matches_finite_differences() {
    for seed in 0..3 {
        check(seed, Activation::Sigmoid, false);
    }
}

#[test]
fn tanh_candidate_matches_finite_differences() {
    for seed in 0..3 {
        check(seed, Activation::Tanh, false);
    }
}

#[test]
fn fixed_dropout_masks_match_finite_differences() {
    check(7, Activation::Sigmoid, true);
    check(8, Activation::Tanh, true);
}

//! Fixtures shared by the benchmarks in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerid_core::features::FeatureStats;
use steerid_core::gru::init_params;
use steerid_core::synth::{ar2_path, gen_trip, Dirt};
use steerid_core::{DriverProfile, ModelConfig, ModelParams, RawSample, SegmentMatrix};

pub fn profile() -> DriverProfile {
    DriverProfile::from_resonance(0, 0.4, 0.93, 2.5, 18.0, 0.04, 1)
}

/// Clean AR(2) steering series of `n` samples.
pub fn steering(n: usize, seed: u64) -> Vec<f64> {
    ar2_path(&profile(), n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Dirty raw recording of `duration_s` seconds.
pub fn raw_trip(duration_s: f64, seed: u64) -> Vec<RawSample> {
    let dirt = Dirt {
        jitter_ms: 20.0,
        missing_rate: 0.002,
        gps_outage_rate: 0.0,
    };
    gen_trip(&profile(), duration_s, dirt, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn segment(label: usize, n_windows: usize, dim: usize, seed: u64) -> SegmentMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SegmentMatrix {
        label,
        n_windows,
        dim,
        data: (0..n_windows * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Model with identity standardisation.
pub fn model(n_classes: usize, dim: usize, hidden: usize) -> ModelParams {
    let cfg = ModelConfig {
        hidden,
        ..ModelConfig::new(n_classes, dim)
    };
    let mut p = init_params(&mut ChaCha8Rng::seed_from_u64(0), cfg).expect("valid config");
    p.stats = Some(FeatureStats {
        mean: vec![0.0; dim],
        scale: vec![1.0; dim],
    });
    p
}

/// Rows of 7 summary features, class `c` shifted along feature `c`.
pub fn forest_rows(n: usize, n_classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = i % n_classes;
            let x = (0..7).map(|j| rng.random_range(-1.0..1.0) + if j == c { 1.0 } else { 0.0 }).collect();
            (x, c)
        })
        .unzip()
}

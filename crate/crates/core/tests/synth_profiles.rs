//! Generated trips against the closed-form behaviour of their AR(2) profiles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use steerid_core::ingest::resample_uniform;
use steerid_core::stationarity::{acf, adf_test};
use steerid_core::synth::{derive_seed, gen_trip, sample_profiles, Dirt};
use steerid_core::{DriverProfile, Preset, SynthConfig};

/// Yule-Walker recursion: rho(1) = phi1 / (1 - phi2), then
/// rho(h) = phi1 rho(h-1) + phi2 rho(h-2).
fn analytic_acf(p: &DriverProfile, h_max: usize) -> Vec<f64> {
    let [p1, p2] = p.ar_coeffs;
    let mut rho = vec![1.0, p1 / (1.0 - p2)];
    for h in 2..=h_max {
        rho.push(p1 * rho[h - 1] + p2 * rho[h - 2]);
    }
    rho
}

fn clean_steering(p: &DriverProfile, duration_s: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = gen_trip(p, duration_s, Dirt::NONE, &mut rng);
    resample_uniform(&raw, "clean", p.driver_id).unwrap().steering
}

fn profiles(preset: Preset, seed: u64) -> Vec<DriverProfile> {
    sample_profiles(&SynthConfig {
        preset,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// A 10-minute trip has 6000 samples, so the sample ACF carries a Bartlett
/// standard error of about 0.025 per lag; the largest of ten lag errors
/// passes 0.05 for a small share of trips.
#[test]
fn ten_minute_trips_follow_yule_walker() {
    let mut total = 0;
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        for preset in [Preset::Separable, Preset::Hard] {
            for p in profiles(preset, seed) {
                let x = clean_steering(&p, 600.0, derive_seed(seed, u64::from(p.driver_id), 0));
                assert_eq!(x.len(), 6000);
                let sample = acf(&x, 10).unwrap();
                let want = analytic_acf(&p, 10);
                let err = (1..=10).map(|h| (sample.rho[h] - want[h]).abs()).fold(0.0, f64::max);
                worst = worst.max(err);
                total += 1;
                within += usize::from(err <= 0.05);
            }
        }
    }
    assert!(within * 100 >= 85 * total, "{within} of {total} trips within 0.05");
    assert!(worst < 0.12, "worst lag error {worst}");
}

#[test]
fn profiles_are_stationary_ar2() {
    for seed in 0..20 {
        for p in profiles(Preset::Separable, seed).into_iter().chain(profiles(Preset::Hard, seed)) {
            let [p1, p2] = p.ar_coeffs;
            assert!(p2 > -1.0 && p1 + p2 < 1.0 && p2 - p1 < 1.0, "{p:?}");
            assert!(p.innovation_std > 0.0);
        }
    }
}

#[test]
fn clean_trips_reject_the_unit_root() {
    let mut tested = 0;
    let mut rejected = 0;
    for seed in 0..20 {
        for p in profiles(Preset::Separable, seed) {
            let x = clean_steering(&p, 1920.0, derive_seed(seed, u64::from(p.driver_id), 9));
            tested += 1;
            rejected += usize::from(adf_test(&x).unwrap().reject_unit_root);
        }
    }
    assert!(rejected * 100 >= 95 * tested, "{rejected} of {tested} clean trips rejected");
}

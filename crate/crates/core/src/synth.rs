//! Synthetic driver fleet.
//!
//! Each driver steers as a stationary AR(2) process whose complex poles
//! `r * exp(+-i * 2 pi f0 / 10 Hz)` put a spectral peak at the driver's
//! resonance `f0`. Speed drops with a smoothed steering envelope. Recordings
//! carry timestamp jitter, missing cells and GPS outages so they exercise the
//! whole ingest path.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_manifest, write_raw_csv, ManifestEntry, RawSample, GRID_MS};
use crate::RATE_HZ;

const BURN_IN: usize = 500;
const ENVELOPE_ALPHA: f64 = 0.02;
/// Outage lengths are uniform in this many rows; the longer ones exceed the
/// 2 s gap limit and split the recording.
const OUTAGE_ROWS: (usize, usize) = (5, 55);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Resonances at least `min_separation_hz` apart, distinct amplitude and
    /// speed profiles.
    #[default]
    Separable,
    /// Overlapping resonances and near-identical amplitudes and speeds.
    Hard,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(Preset::Separable),
            "hard" => Ok(Preset::Hard),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub driver_id: u32,
    pub ar_coeffs: [f64; 2],
    pub innovation_std: f64,
    /// Pole frequency of the AR(2) process.
    pub resonance_hz: f64,
    pub pole_radius: f64,
    pub velocity_base: f64,
    /// Speed reduction per degree of smoothed absolute steering.
    pub velocity_coupling: f64,
    pub seed: u64,
}

impl DriverProfile {
    pub fn from_resonance(
        driver_id: u32,
        resonance_hz: f64,
        pole_radius: f64,
        innovation_std: f64,
        velocity_base: f64,
        velocity_coupling: f64,
        seed: u64,
    ) -> Self {
        let theta = 2.0 * PI * resonance_hz / RATE_HZ;
        DriverProfile {
            driver_id,
            ar_coeffs: [2.0 * pole_radius * theta.cos(), -pole_radius * pole_radius],
            innovation_std,
            resonance_hz,
            pole_radius,
            velocity_base,
            velocity_coupling,
            seed,
        }
    }

    /// Inside the AR(2) stationarity triangle with positive innovation.
    pub fn is_stationary(&self) -> bool {
        let [p1, p2] = self.ar_coeffs;
        p2 > -1.0 && p1 + p2 < 1.0 && p2 - p1 < 1.0 && self.innovation_std > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_drivers: usize,
    pub trips_per_driver: usize,
    pub trip_min_s: f64,
    pub trip_max_s: f64,
    /// Timestamps move uniformly within `+-jitter_ms` of the grid.
    pub jitter_ms: f64,
    pub missing_rate: f64,
    /// Expected fraction of rows inside a GPS outage.
    pub gps_outage_rate: f64,
    pub seed: u64,
    pub preset: Preset,
    pub min_separation_hz: f64,
    /// Interval resonances are drawn from; the preset's band when `None`.
    pub resonance_range_hz: Option<(f64, f64)>,
    pub pole_radius: f64,
}

impl Default for SynthConfig {
    /// Five separable drivers with 9 trips of 32-36 min each, enough for a
    /// 240 min training and 30 min test protocol after cleaning.
    fn default() -> Self {
        SynthConfig {
            n_drivers: 5,
            trips_per_driver: 9,
            trip_min_s: 32.0 * 60.0,
            trip_max_s: 36.0 * 60.0,
            jitter_ms: 20.0,
            missing_rate: 0.002,
            gps_outage_rate: 0.003,
            seed: 0,
            preset: Preset::Separable,
            min_separation_hz: 0.15,
            resonance_range_hz: None,
            pole_radius: 0.93,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        if self.n_drivers == 0 || self.trips_per_driver == 0 {
            return Err(Error::Config("need at least one driver and one trip".into()));
        }
        if !rate_ok(self.missing_rate) || !rate_ok(self.gps_outage_rate) {
            return Err(Error::Config("rates must lie in [0, 1)".into()));
        }
        if !(self.trip_min_s > 0.0 && self.trip_max_s >= self.trip_min_s) {
            return Err(Error::Config("invalid trip duration range".into()));
        }
        if !(0.0..GRID_MS / 2.0).contains(&self.jitter_ms) {
            return Err(Error::Config(format!("jitter must lie in [0, {}) ms", GRID_MS / 2.0)));
        }
        if !(self.pole_radius > 0.0 && self.pole_radius < 1.0) {
            return Err(Error::Config("pole radius must lie in (0, 1)".into()));
        }
        let (lo, hi) = self.resonance_range();
        if !(lo > 0.0 && hi > lo && hi < RATE_HZ / 2.0) {
            return Err(Error::Config("resonance range must lie inside (0, 5) Hz".into()));
        }
        Ok(())
    }

    pub fn resonance_range(&self) -> (f64, f64) {
        self.resonance_range_hz.unwrap_or(match self.preset {
            Preset::Separable => (0.1, 1.6),
            Preset::Hard => (0.3, 0.6),
        })
    }

    /// Minimum generated duration per driver, in minutes.
    pub fn min_minutes_per_driver(&self) -> f64 {
        self.trips_per_driver as f64 * self.trip_min_s / 60.0
    }
}

/// SplitMix64 finaliser over a combined key, used for sub-seeds.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_resonances<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Vec<f64>> {
    let (lo, hi) = cfg.resonance_range();
    let n = cfg.n_drivers;
    if cfg.preset == Preset::Hard {
        return Ok((0..n).map(|_| rng.random_range(lo..=hi)).collect());
    }
    let sep = cfg.min_separation_hz;
    if n > 1 && (hi - lo) / ((n - 1) as f64) < sep {
        return Err(Error::Config(format!(
            "cannot place {n} resonances {sep} Hz apart inside [{lo}, {hi}] Hz"
        )));
    }
    for _ in 0..10_000 {
        let mut fs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        let mut sorted = fs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[1] - w[0] >= sep) {
            return Ok(std::mem::take(&mut fs));
        }
    }
    Err(Error::Config(format!(
        "failed to place {n} resonances {sep} Hz apart inside [{lo}, {hi}] Hz"
    )))
}

pub fn sample_profiles(cfg: &SynthConfig) -> Result<Vec<DriverProfile>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX, 0));
    let resonances = sample_resonances(cfg, &mut rng)?;
    let profiles: Vec<DriverProfile> = resonances
        .into_iter()
        .enumerate()
        .map(|(d, f0)| {
            let (radius, innov, base, coupling) = match cfg.preset {
                Preset::Separable => (
                    cfg.pole_radius,
                    rng.random_range(1.5..4.0),
                    rng.random_range(12.0..25.0),
                    rng.random_range(0.02..0.08),
                ),
                Preset::Hard => (
                    (cfg.pole_radius + rng.random_range(-0.02..0.02)).clamp(0.5, 0.99),
                    rng.random_range(2.4..2.6),
                    rng.random_range(17.0..19.0),
                    0.04,
                ),
            };
            DriverProfile::from_resonance(d as u32, f0, radius, innov, base, coupling, derive_seed(cfg.seed, d as u64, 0))
        })
        .collect();
    debug_assert!(profiles.iter().all(DriverProfile::is_stationary));
    Ok(profiles)
}

/// Noise-free AR(2) steering path of `n` samples at 10 Hz (after burn-in).
pub fn ar2_path<R: Rng + ?Sized>(profile: &DriverProfile, n: usize, rng: &mut R) -> Vec<f64> {
    let [p1, p2] = profile.ar_coeffs;
    let noise = Normal::new(0.0, profile.innovation_std).expect("positive innovation std");
    let (mut x1, mut x2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for k in 0..n + BURN_IN {
        let x = p1 * x1 + p2 * x2 + noise.sample(rng);
        x2 = x1;
        x1 = x;
        if k >= BURN_IN {
            out.push(x);
        }
    }
    out
}

/// Dirt settings applied to a clean recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dirt {
    pub jitter_ms: f64,
    pub missing_rate: f64,
    pub gps_outage_rate: f64,
}

impl Dirt {
    pub const NONE: Dirt = Dirt {
        jitter_ms: 0.0,
        missing_rate: 0.0,
        gps_outage_rate: 0.0,
    };
}

impl From<&SynthConfig> for Dirt {
    fn from(c: &SynthConfig) -> Self {
        Dirt {
            jitter_ms: c.jitter_ms,
            missing_rate: c.missing_rate,
            gps_outage_rate: c.gps_outage_rate,
        }
    }
}

pub fn gen_trip<R: Rng + ?Sized>(profile: &DriverProfile, duration_s: f64, dirt: Dirt, rng: &mut R) -> Vec<RawSample> {
    let n = (duration_s * RATE_HZ).round() as usize;
    let steering = ar2_path(profile, n, rng);

    let drift_noise = Normal::new(0.0, 0.05).expect("valid");
    let mut drift = 0.0;
    let mut envelope = steering.first().map_or(0.0, |s| s.abs());

    let mean_outage = (OUTAGE_ROWS.0 + OUTAGE_ROWS.1) as f64 / 2.0;
    let outage_start = dirt.gps_outage_rate / mean_outage;
    let mut outage_left = 0usize;

    let mut out = Vec::with_capacity(n);
    for (k, &s) in steering.iter().enumerate() {
        envelope += ENVELOPE_ALPHA * (s.abs() - envelope);
        drift = 0.995 * drift + drift_noise.sample(rng);
        let speed = (profile.velocity_base + drift - profile.velocity_coupling * envelope).max(0.0);

        let jitter = if dirt.jitter_ms > 0.0 {
            rng.random_range(-dirt.jitter_ms..=dirt.jitter_ms).round()
        } else {
            0.0
        };
        let timestamp_ms = (k as f64 * GRID_MS + jitter).max(0.0);

        if outage_left == 0 && outage_start > 0.0 && rng.random::<f64>() < outage_start {
            outage_left = rng.random_range(OUTAGE_ROWS.0..=OUTAGE_ROWS.1);
        }
        let gps_valid = outage_left == 0;
        outage_left = outage_left.saturating_sub(1);

        let mut keep = |v: f64| (dirt.missing_rate == 0.0 || rng.random::<f64>() >= dirt.missing_rate).then_some(v);
        let steering_deg = keep((s * 1e4).round() / 1e4);
        let speed_mps = keep((speed * 1e4).round() / 1e4);
        out.push(RawSample {
            timestamp_ms,
            steering_deg,
            speed_mps,
            gps_valid,
        });
    }
    out
}

/// One generated recording.
#[derive(Debug, Clone)]
pub struct SynthTrip {
    pub driver_id: u32,
    pub trip_index: usize,
    pub samples: Vec<RawSample>,
}

impl SynthTrip {
    pub fn file_name(&self) -> String {
        format!("d{:03}_t{:03}.csv", self.driver_id, self.trip_index)
    }
}

/// Generates the fleet in memory. Trips of each driver are in chronological
/// order.
pub fn gen_fleet_trips(cfg: &SynthConfig) -> Result<(Vec<DriverProfile>, Vec<SynthTrip>)> {
    let profiles = sample_profiles(cfg)?;
    let dirt = Dirt::from(cfg);
    let mut trips = Vec::with_capacity(cfg.n_drivers * cfg.trips_per_driver);
    for p in &profiles {
        for t in 0..cfg.trips_per_driver {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, t as u64, 1));
            let duration = if cfg.trip_max_s > cfg.trip_min_s {
                rng.random_range(cfg.trip_min_s..=cfg.trip_max_s)
            } else {
                cfg.trip_min_s
            };
            trips.push(SynthTrip {
                driver_id: p.driver_id,
                trip_index: t,
                samples: gen_trip(p, duration, dirt, &mut rng),
            });
        }
    }
    Ok((profiles, trips))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FleetSummary {
    pub config: SynthConfig,
    pub profiles: Vec<DriverProfile>,
    pub generated_minutes: Vec<f64>,
}

/// Writes trips to `out/trips/`, plus `manifest.csv` and `profiles.json`.
pub fn gen_fleet(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<FleetSummary> {
    let out = out.as_ref();
    let trips_dir = out.join("trips");
    std::fs::create_dir_all(&trips_dir).map_err(|e| Error::io(&trips_dir, e))?;
    let (profiles, trips) = gen_fleet_trips(cfg)?;
    let mut entries = Vec::with_capacity(trips.len());
    let mut minutes = vec![0.0; profiles.len()];
    for trip in &trips {
        let rel = PathBuf::from("trips").join(trip.file_name());
        let path = out.join(&rel);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_raw_csv(&trip.samples, file)?;
        minutes[trip.driver_id as usize] += trip.samples.len() as f64 / RATE_HZ / 60.0;
        entries.push(ManifestEntry {
            driver_id: trip.driver_id,
            trip_file: rel,
        });
    }
    write_manifest(&entries, out.join("manifest.csv"))?;
    let summary = FleetSummary {
        config: cfg.clone(),
        profiles,
        generated_minutes: minutes,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    let p = out.join("profiles.json");
    std::fs::write(&p, json).map_err(|e| Error::io(p, e))?;
    Ok(summary)
}

/// Standard normal draw, exposed for tests that need matching noise.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::clean_samples;

    fn profile() -> DriverProfile {
        DriverProfile::from_resonance(0, 0.4, 0.9, 2.0, 20.0, 0.05, 7)
    }

    #[test]
    fn clean_trip_lies_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trip = gen_trip(&profile(), 60.0, Dirt::NONE, &mut rng);
        assert_eq!(trip.len(), 600);
        for (k, s) in trip.iter().enumerate() {
            assert_eq!(s.timestamp_ms, k as f64 * 100.0);
            assert!(s.steering_deg.is_some() && s.speed_mps.is_some() && s.gps_valid);
            assert!(s.speed_mps.unwrap() >= 0.0);
        }
    }

    #[test]
    fn fixed_seed_reproduces_trip() {
        let dirt = Dirt {
            jitter_ms: 20.0,
            missing_rate: 0.01,
            gps_outage_rate: 0.01,
        };
        let a = gen_trip(&profile(), 120.0, dirt, &mut ChaCha8Rng::seed_from_u64(4));
        let b = gen_trip(&profile(), 120.0, dirt, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn dirt_accounting() {
        let dirt = Dirt {
            jitter_ms: 30.0,
            missing_rate: 0.05,
            gps_outage_rate: 0.05,
        };
        let raw = gen_trip(&profile(), 600.0, dirt, &mut ChaCha8Rng::seed_from_u64(2));
        let kept = clean_samples(&raw);
        let removed = raw
            .iter()
            .filter(|s| !s.gps_valid || s.steering_deg.is_none() || s.speed_mps.is_none())
            .count();
        assert!(removed > 0);
        assert_eq!(kept.len() + removed, raw.len());
    }

    #[test]
    fn separable_profiles_are_spread() {
        let cfg = SynthConfig::default();
        let profiles = sample_profiles(&cfg).unwrap();
        assert_eq!(profiles.len(), 5);
        for (i, a) in profiles.iter().enumerate() {
            assert!(a.is_stationary());
            for b in &profiles[i + 1..] {
                assert!((a.resonance_hz - b.resonance_hz).abs() >= 0.15);
                assert_ne!(a.ar_coeffs, b.ar_coeffs);
            }
        }
    }

    #[test]
    fn impossible_separation_is_config_error() {
        let cfg = SynthConfig {
            n_drivers: 12,
            ..SynthConfig::default()
        };
        assert!(matches!(sample_profiles(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn default_protocol_has_enough_data() {
        assert!(SynthConfig::default().min_minutes_per_driver() >= 270.0);
    }

    #[test]
    fn fleet_files_are_reproducible() {
        let cfg = SynthConfig {
            n_drivers: 2,
            trips_per_driver: 2,
            trip_min_s: 30.0,
            trip_max_s: 40.0,
            ..SynthConfig::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        gen_fleet(&cfg, a.path()).unwrap();
        gen_fleet(&cfg, b.path()).unwrap();
        for rel in ["manifest.csv", "profiles.json", "trips/d000_t000.csv", "trips/d001_t001.csv"] {
            let x = std::fs::read(a.path().join(rel)).unwrap();
            let y = std::fs::read(b.path().join(rel)).unwrap();
            assert_eq!(x, y, "{rel}");
        }
    }
}

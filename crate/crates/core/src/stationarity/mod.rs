//! Stationarity analysis: right-sided ACF with a 1% significance band, the
//! correlated lag of a trip, the fleet lag histogram and the window
//! recommendation derived from it.

mod adf;

pub use adf::{adf_test, mackinnon_critical_1pct, max_lag, AdfResult, MIN_ADF_LEN};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::RATE_HZ;

/// 20 s at 10 Hz.
pub const DEFAULT_MAX_LAG: usize = 200;
/// Two-sided 1% normal quantile.
pub const Z_995: f64 = 2.575_829_303_548_901;
/// Lags that must stay inside the band before a crossing counts (1 s).
pub const PERSISTENCE_LAGS: usize = 10;
pub const HIST_BIN_S: f64 = 0.1;
pub const HIST_MAX_S: f64 = 20.0;
pub const MIN_WINDOW_S: f64 = 2.5;
pub const MAX_WINDOW_S: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfProfile {
    /// `rho[h]` for `h = 0..=h_max`.
    pub rho: Vec<f64>,
    pub n: usize,
    /// Bartlett half-width at the 1% level for each lag.
    pub band: Vec<f64>,
}

impl AcfProfile {
    pub fn h_max(&self) -> usize {
        self.rho.len() - 1
    }
}

/// Sample ACF with the `1/n` autocovariance estimator and Bartlett band
/// `z * sqrt((1 + 2 * sum_{k=1}^{h-1} rho(k)^2) / n)`.
pub fn acf(x: &[f64], h_max: usize) -> Result<AcfProfile> {
    let n = x.len();
    if h_max < 1 || n <= h_max {
        return Err(Error::InsufficientData(format!(
            "ACF needs more than {h_max} samples (and h_max >= 1), got {n}"
        )));
    }
    let mean = stats::mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let gamma0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(Error::DegenerateSignal("constant series has no autocorrelation".into()));
    }
    let mut rho = Vec::with_capacity(h_max + 1);
    rho.push(1.0);
    for h in 1..=h_max {
        let g: f64 = c[..n - h].iter().zip(&c[h..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        rho.push(g / gamma0);
    }
    let mut band = Vec::with_capacity(h_max + 1);
    let nf = n as f64;
    band.push(Z_995 / nf.sqrt());
    let mut cum = 0.0;
    for h in 1..=h_max {
        if h >= 2 {
            cum += rho[h - 1] * rho[h - 1];
        }
        band.push(Z_995 * ((1.0 + 2.0 * cum) / nf).sqrt());
    }
    Ok(AcfProfile { rho, n, band })
}

/// Smallest lag (in seconds) from which the ACF stays inside the band for
/// [`PERSISTENCE_LAGS`] consecutive lags. `None` if it never does.
pub fn correlated_lag(p: &AcfProfile) -> Option<f64> {
    let h_max = p.h_max();
    let inside: Vec<bool> = p.rho.iter().zip(&p.band).map(|(r, b)| r.abs() < *b).collect();
    // run[h] = number of consecutive inside lags starting at h
    let mut run = vec![0usize; h_max + 2];
    for h in (1..=h_max).rev() {
        run[h] = if inside[h] { run[h + 1] + 1 } else { 0 };
    }
    (1..=h_max)
        .find(|&h| {
            let end = (h + PERSISTENCE_LAGS - 1).min(h_max);
            run[h] >= end - h + 1
        })
        .map(|h| h as f64 / RATE_HZ)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagHistogram {
    pub bin_width: f64,
    /// Bin `k` is centred on `k * bin_width`.
    pub counts: Vec<u64>,
    pub mode_s: f64,
    pub median_s: f64,
    pub mean_s: f64,
}

impl LagHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn aggregate_lag_histogram(lags: &[f64]) -> Result<LagHistogram> {
    if lags.is_empty() {
        return Err(Error::EmptyInput("no correlated lags to aggregate".into()));
    }
    let n_bins = (HIST_MAX_S / HIST_BIN_S).round() as usize + 1;
    let mut counts = vec![0u64; n_bins];
    for &l in lags {
        let k = (l / HIST_BIN_S).round().clamp(0.0, (n_bins - 1) as f64) as usize;
        counts[k] += 1;
    }
    // first maximum wins, i.e. the smaller lag on ties
    let mode_bin = counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (k, &c)| if c > best.1 { (k, c) } else { best })
        .0;
    Ok(LagHistogram {
        bin_width: HIST_BIN_S,
        counts,
        mode_s: mode_bin as f64 / HIST_BIN_S.recip(),
        median_s: stats::median(lags),
        mean_s: stats::mean(lags),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecommendation {
    pub h_opt_s: f64,
    pub h_opt_samples: usize,
    pub source: String,
}

/// Histogram mode clamped to `[2.5, 10]` s and rounded to the nearest 0.5 s.
pub fn recommend_window(hist: &LagHistogram) -> WindowRecommendation {
    let clamped = hist.mode_s.clamp(MIN_WINDOW_S, MAX_WINDOW_S);
    let h_opt_s = (clamped * 2.0).round() / 2.0;
    WindowRecommendation {
        h_opt_s,
        h_opt_samples: crate::seconds_to_samples(h_opt_s),
        source: "mode".into(),
    }
}

/// Per-trip outcome of the stationarity analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripStationarity {
    pub trip_id: String,
    pub adf_statistic: f64,
    pub reject: bool,
    /// Only computed for trips where the unit root was rejected.
    pub h_cor_s: Option<f64>,
}

pub fn analyze_trip(trip_id: &str, steering: &[f64]) -> Result<TripStationarity> {
    let adf = adf_test(steering)?;
    let h_cor_s = if adf.reject_unit_root {
        correlated_lag(&acf(steering, DEFAULT_MAX_LAG)?)
    } else {
        None
    };
    Ok(TripStationarity {
        trip_id: trip_id.to_string(),
        adf_statistic: adf.statistic,
        reject: adf.reject_unit_root,
        h_cor_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetStationarity {
    pub mode_s: f64,
    pub median_s: f64,
    pub mean_s: f64,
    pub recommended_window_s: f64,
    pub tested: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub trips: Vec<TripStationarity>,
    pub fleet: FleetStationarity,
    pub histogram: LagHistogram,
}

/// Runs the per-trip analysis over `trips` and reduces it to the fleet report.
pub fn analyze_fleet<'a>(trips: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<StationarityReport> {
    let per_trip: Vec<TripStationarity> = trips
        .into_iter()
        .map(|(id, x)| analyze_trip(id, x))
        .collect::<Result<_>>()?;
    let lags: Vec<f64> = per_trip.iter().filter_map(|t| t.h_cor_s).collect();
    let histogram = aggregate_lag_histogram(&lags)?;
    let rec = recommend_window(&histogram);
    Ok(StationarityReport {
        fleet: FleetStationarity {
            mode_s: histogram.mode_s,
            median_s: histogram.median_s,
            mean_s: histogram.mean_s,
            recommended_window_s: rec.h_opt_s,
            tested: per_trip.len(),
            rejected: per_trip.iter().filter(|t| t.reject).count(),
        },
        trips: per_trip,
        histogram,
    })
}

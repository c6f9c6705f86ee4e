//! Driver identification from steering-wheel time series.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`ingest`]: parse raw trip recordings, drop invalid rows, resample to a
//!   uniform 10 Hz grid and enforce the minimum trip length.
//! - [`stationarity`]: unit-root testing, right-sided ACF with a 1% band, the
//!   correlated lag of each trip and the fleet-level window recommendation.
//! - [`features`]: fixed-length segments, non-overlapping windows, log-FFT
//!   features plus mean velocity, segment matrices and training batches.
//! - [`gru`]: two-layer bidirectional GRU encoder with a softmax vote head,
//!   backpropagation through time, RMSProp and checkpoints.
//! - [`train`]: the training loop.
//! - [`eval`]: train/test protocol, cumulative vote decisions, confusion
//!   matrices and the window-size sweep.
//! - [`forest`]: decision-forest baseline over per-window summary statistics.
//! - [`synth`]: a synthetic driver fleet built from AR(2) steering processes.

pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod gru;
pub mod ingest;
pub mod stats;
pub mod stationarity;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use eval::{AccuracyCurve, ConfusionMatrix, Protocol, SplitPlan, SweepRow};
pub use features::{Batch, RawSegment, SegmentMatrix, WindowFeature};
pub use forest::{Forest, ForestConfig, SummaryFeatures};
pub use gru::{Activation, Gradients, ModelConfig, ModelParams, OptimizerState, VoteVector};
pub use ingest::{DriverTrips, RawSample, UniformTrip};
pub use stationarity::{AcfProfile, AdfResult, LagHistogram, WindowRecommendation};
pub use synth::{DriverProfile, Preset, SynthConfig};
pub use train::{TrainConfig, TrainOutcome};

/// Sampling rate of every resampled trip.
pub const RATE_HZ: f64 = 10.0;

/// Converts a duration in seconds to a sample count at [`RATE_HZ`].
pub fn seconds_to_samples(seconds: f64) -> usize {
    (seconds * RATE_HZ).round() as usize
}

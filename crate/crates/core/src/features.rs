//! Segments, windows and log-FFT features.
//!
//! A driver's trips are concatenated in chronological order and cut into
//! fixed-length segments. Each segment is split into non-overlapping windows
//! of `w` samples. A window maps to `log2(|DFT| + 1)` over all `w` bins with the
//! window's mean velocity appended, so every feature row has `w + 1` entries.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::ingest::DriverTrips;

/// Segment length S.
pub const SEGMENT_S: f64 = 900.0;
pub const BATCH_SIZE: usize = 32;
/// Windows per vote; segment matrices are truncated to a multiple of it.
pub const WINDOWS_PER_VOTE: usize = 6;

/// A contiguous slice of one driver's concatenated trip stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub driver_id: u32,
    /// Offset of the first sample in the driver's concatenated stream.
    pub start: usize,
    pub steering: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl RawSegment {
    pub fn len(&self) -> usize {
        self.steering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steering.is_empty()
    }

    pub fn span(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

/// Every full segment obtainable from a driver, in time order. The tail
/// shorter than one segment is dropped.
pub fn segment_stream(driver: &DriverTrips, segment_samples: usize) -> Vec<RawSegment> {
    assert!(segment_samples > 0);
    let steering: Vec<f64> = driver.trips.iter().flat_map(|t| t.steering.iter().copied()).collect();
    let velocity: Vec<f64> = driver.trips.iter().flat_map(|t| t.velocity.iter().copied()).collect();
    (0..steering.len() / segment_samples)
        .map(|k| {
            let r = k * segment_samples..(k + 1) * segment_samples;
            RawSegment {
                driver_id: driver.driver_id,
                start: r.start,
                steering: steering[r.clone()].to_vec(),
                velocity: velocity[r].to_vec(),
            }
        })
        .collect()
}

/// Exactly `n_segments` segments of `segment_s` seconds per driver.
pub fn build_segments(drivers: &[DriverTrips], segment_s: f64, n_segments: usize) -> Result<Vec<Vec<RawSegment>>> {
    let seg_len = crate::seconds_to_samples(segment_s);
    drivers
        .iter()
        .map(|d| {
            let mut segs = segment_stream(d, seg_len);
            if segs.len() < n_segments {
                return Err(Error::Balance {
                    driver: d.driver_id,
                    reason: format!(
                        "{:.1} min of data yields {} segments of {segment_s} s, need {n_segments}",
                        d.total_samples() as f64 / crate::RATE_HZ / 60.0,
                        segs.len()
                    ),
                });
            }
            segs.truncate(n_segments);
            Ok(segs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFeature {
    pub lft: Vec<f64>,
    pub mean_velocity: f64,
}

impl WindowFeature {
    /// `lft` followed by the mean velocity.
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = self.lft.clone();
        row.push(self.mean_velocity);
        row
    }
}

/// Reusable log-FFT for a fixed window length.
#[derive(Clone)]
pub struct LftExtractor {
    w: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LftExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LftExtractor").field("w", &self.w).finish()
    }
}

impl LftExtractor {
    pub fn new(w: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(w);
        LftExtractor { w, fft }
    }

    pub fn window_len(&self) -> usize {
        self.w
    }

    /// Writes `w` log-magnitudes and the mean velocity into `out`.
    pub fn extract_into(&self, window: &[f64], velocity: &[f64], out: &mut [f64]) {
        assert_eq!(window.len(), self.w);
        assert_eq!(out.len(), self.w + 1);
        let mut buf: Vec<Complex<f64>> = window.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = (c.norm() + 1.0).log2();
        }
        let mv = if velocity.is_empty() {
            0.0
        } else {
            velocity.iter().sum::<f64>() / velocity.len() as f64
        };
        out[self.w] = mv.max(0.0);
    }

    pub fn extract(&self, window: &[f64], velocity: &[f64]) -> WindowFeature {
        let mut row = vec![0.0; self.w + 1];
        self.extract_into(window, velocity, &mut row);
        let mean_velocity = row.pop().unwrap_or(0.0);
        WindowFeature {
            lft: row,
            mean_velocity,
        }
    }
}

/// One-off log-FFT feature of a single window.
pub fn log_fft_window(window: &[f64], velocity: &[f64]) -> WindowFeature {
    LftExtractor::new(window.len()).extract(window, velocity)
}

/// `F x (w + 1)` row-major feature matrix of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatrix {
    /// Class index of the driver.
    pub label: usize,
    pub n_windows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SegmentMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn n_votes(&self) -> usize {
        self.n_windows / WINDOWS_PER_VOTE
    }

    pub fn window_len(&self) -> usize {
        self.dim - 1
    }
}

/// Window length in samples for `window_s` seconds. The duration must be a
/// multiple of 0.1 s inside the recommended range.
pub fn window_samples(window_s: f64) -> Result<usize> {
    use crate::stationarity::{MAX_WINDOW_S, MIN_WINDOW_S};
    let ticks = window_s * crate::RATE_HZ;
    if (ticks - ticks.round()).abs() > 1e-6 || !(MIN_WINDOW_S - 1e-9..=MAX_WINDOW_S + 1e-9).contains(&window_s) {
        return Err(Error::Config(format!(
            "window {window_s} s must be a multiple of 0.1 s in [{MIN_WINDOW_S}, {MAX_WINDOW_S}]"
        )));
    }
    Ok(ticks.round() as usize)
}

/// Number of windows kept for a segment of `len` samples and windows of `w`.
pub fn kept_windows(len: usize, w: usize) -> usize {
    (len / w) / WINDOWS_PER_VOTE * WINDOWS_PER_VOTE
}

/// Start index of each kept window of a segment.
pub fn window_starts(len: usize, w: usize) -> impl Iterator<Item = usize> {
    (0..kept_windows(len, w)).map(move |k| k * w)
}

pub fn build_segment_matrix(segment: &RawSegment, label: usize, w: usize) -> Result<SegmentMatrix> {
    if w < 4 {
        return Err(Error::Config(format!("window of {w} samples is too short, need >= 4")));
    }
    let needed = WINDOWS_PER_VOTE * w;
    if segment.len() < needed {
        return Err(Error::TooShort {
            len: segment.len(),
            needed,
        });
    }
    let extractor = LftExtractor::new(w);
    let f = kept_windows(segment.len(), w);
    let dim = w + 1;
    let mut data = vec![0.0; f * dim];
    for (k, start) in window_starts(segment.len(), w).enumerate() {
        let r = start..start + w;
        extractor.extract_into(
            &segment.steering[r.clone()],
            &segment.velocity[r],
            &mut data[k * dim..(k + 1) * dim],
        );
    }
    Ok(SegmentMatrix {
        label,
        n_windows: f,
        dim,
        data,
    })
}

/// Segment matrices drawn for one optimisation step.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub segments: Vec<&'a SegmentMatrix>,
    pub labels: Vec<usize>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `[batch, F, w + 1]`.
    pub fn shape(&self) -> [usize; 3] {
        let s = self.segments.first().map_or((0, 0), |m| (m.n_windows, m.dim));
        [self.len(), s.0, s.1]
    }
}

/// Checks that every matrix in the pool has the same `F` and `w`.
pub fn pool_shape(pool: &[Vec<SegmentMatrix>]) -> Result<(usize, usize)> {
    let mut all = pool.iter().flatten();
    let first = all
        .next()
        .ok_or_else(|| Error::Config("empty segment pool".into()))?;
    if pool.iter().any(Vec::is_empty) {
        return Err(Error::Config("a class has no segments in the pool".into()));
    }
    for m in all {
        if m.n_windows != first.n_windows || m.dim != first.dim {
            return Err(Error::Config(format!(
                "segment shape {}x{} differs from {}x{}",
                m.n_windows, m.dim, first.n_windows, first.dim
            )));
        }
    }
    Ok((first.n_windows, first.dim))
}

/// Draws `batch_size` segments: a class uniformly, then one of its segments
/// uniformly. `pool[c]` holds the segments of class `c`.
pub fn assemble_batch<'a, R: Rng + ?Sized>(
    pool: &'a [Vec<SegmentMatrix>],
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch<'a>> {
    pool_shape(pool)?;
    let mut segments = Vec::with_capacity(batch_size);
    let mut labels = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let class = rng.random_range(0..pool.len());
        let seg = &pool[class][rng.random_range(0..pool[class].len())];
        segments.push(seg);
        labels.push(class);
    }
    Ok(Batch { segments, labels })
}

/// Per-dimension mean and scale used to standardise feature rows.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureStats {
    /// Fits on every row of every matrix. Dimensions without spread get
    /// scale 1.
    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a SegmentMatrix>) -> Result<Self> {
        let mut dim = None;
        let mut count = 0usize;
        let mut sum = Vec::new();
        let mut sumsq = Vec::new();
        for m in matrices {
            let d = *dim.get_or_insert(m.dim);
            if d != m.dim {
                return Err(Error::Config("feature dimension differs across matrices".into()));
            }
            if sum.is_empty() {
                sum = vec![0.0; d];
                sumsq = vec![0.0; d];
            }
            for row in m.rows() {
                for (k, v) in row.iter().enumerate() {
                    sum[k] += v;
                    sumsq[k] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyInput("no feature rows to standardise".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sumsq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureStats { mean, scale })
    }

    pub fn apply(&self, row: &[f64], out: &mut [f64]) {
        for (k, (o, v)) in out.iter_mut().zip(row).enumerate() {
            *o = (v - self.mean[k]) / self.scale[k];
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

const CACHE_MAGIC: &[u8; 4] = b"SFC1";
const CACHE_VERSION: u32 = 1;

/// Writes segment matrices as a little-endian feature cache: header
/// `{magic, version, F, w}` followed by one record per segment
/// `{driver_id u32, F u32, w u32, F*(w+1) f32 row-major}`.
pub fn write_feature_cache(path: impl AsRef<Path>, matrices: &[(u32, SegmentMatrix)]) -> Result<()> {
    let path = path.as_ref();
    let (f, w) = matrices
        .first()
        .map_or((0, 0), |(_, m)| (m.n_windows as u32, m.window_len() as u32));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(CACHE_MAGIC).map_err(io)?;
    for v in [CACHE_VERSION, f, w] {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for (driver_id, m) in matrices {
        if m.n_windows as u32 != f || m.window_len() as u32 != w {
            return Err(Error::Config("feature cache requires a uniform shape".into()));
        }
        for v in [*driver_id, f, w] {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for v in &m.data {
            out.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Reads a feature cache. Labels are left at 0; callers map driver ids to
/// classes.
pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<Vec<(u32, SegmentMatrix)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format(format!("feature cache {}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(bad("missing header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != CACHE_VERSION {
        return Err(bad("unsupported version"));
    }
    let (f, w) = (u32_at(8) as usize, u32_at(12) as usize);
    let dim = w + 1;
    let rec_len = 12 + f * dim * 4;
    let body = &bytes[16..];
    if body.len() % rec_len != 0 {
        return Err(bad("truncated record"));
    }
    let mut out = Vec::with_capacity(body.len() / rec_len);
    for rec in body.chunks_exact(rec_len) {
        let g = |o: usize| u32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        if g(4) as usize != f || g(8) as usize != w {
            return Err(bad("record shape differs from header"));
        }
        let data = rec[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((
            g(0),
            SegmentMatrix {
                label: 0,
                n_windows: f,
                dim,
                data,
            },
        ));
    }
    Ok(out)
}

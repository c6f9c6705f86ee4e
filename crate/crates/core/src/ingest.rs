//! Trip ingestion: CSV parsing, row cleaning, 10 Hz resampling and the
//! minimum-length filter.
//!
//! Trip files are UTF-8 CSV with the header
//! `timestamp_ms,steering_deg,speed_mps,gps_valid`. An empty cell marks a
//! missing value and `gps_valid` is `0` or `1`. A fleet is described by a
//! manifest CSV `driver_id,trip_file` whose paths are relative to the
//! manifest's directory.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Header every trip file must carry.
pub const TRIP_HEADER: [&str; 4] = ["timestamp_ms", "steering_deg", "speed_mps", "gps_valid"];
/// Header of the fleet manifest.
pub const MANIFEST_HEADER: [&str; 2] = ["driver_id", "trip_file"];
/// Grid spacing of a resampled trip.
pub const GRID_MS: f64 = 100.0;
/// Five minutes at 10 Hz.
pub const MIN_TRIP_SAMPLES: usize = 3000;
/// Gaps longer than this split a recording into separate trips.
pub const MAX_GAP_MS: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub timestamp_ms: f64,
    pub steering_deg: Option<f64>,
    pub speed_mps: Option<f64>,
    pub gps_valid: bool,
}

impl RawSample {
    pub fn new(timestamp_ms: f64, steering_deg: f64, speed_mps: f64) -> Self {
        RawSample {
            timestamp_ms,
            steering_deg: Some(steering_deg),
            speed_mps: Some(speed_mps),
            gps_valid: true,
        }
    }

    fn is_complete(&self) -> bool {
        self.gps_valid
            && self.steering_deg.is_some_and(f64::is_finite)
            && self.speed_mps.is_some_and(f64::is_finite)
    }
}

/// A cleaned trip on an exact 100 ms grid starting at `start_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformTrip {
    pub trip_id: String,
    pub driver_id: u32,
    /// Time of the first grid point, a multiple of [`GRID_MS`].
    pub start_ms: f64,
    pub steering: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl UniformTrip {
    pub fn rate_hz(&self) -> f64 {
        crate::RATE_HZ
    }

    pub fn len(&self) -> usize {
        self.steering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steering.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / crate::RATE_HZ
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.start_ms + k as f64 * GRID_MS)
    }
}

/// All usable trips of one driver, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverTrips {
    pub driver_id: u32,
    pub trips: Vec<UniformTrip>,
}

impl DriverTrips {
    pub fn total_samples(&self) -> usize {
        self.trips.iter().map(UniformTrip::len).sum()
    }
}

pub fn parse_trip_csv(path: impl AsRef<Path>) -> Result<Vec<RawSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trip_csv(file)
}

pub fn read_trip_csv<R: Read>(reader: R) -> Result<Vec<RawSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
    if headers.iter().ne(TRIP_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{}`",
            TRIP_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Row {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |reason: String| Error::Row { line, reason };

        let ts = record.get(0).unwrap_or("");
        let timestamp_ms: f64 = ts
            .parse()
            .map_err(|_| row_err(format!("unparseable timestamp `{ts}`")))?;
        if !timestamp_ms.is_finite() {
            return Err(row_err(format!("non-finite timestamp `{ts}`")));
        }
        let steering_deg = parse_optional(record.get(1).unwrap_or("")).map_err(&row_err)?;
        let speed_mps = parse_optional(record.get(2).unwrap_or("")).map_err(&row_err)?;
        let gps_valid = match record.get(3).unwrap_or("") {
            "1" | "true" => true,
            "0" | "false" | "" => false,
            other => return Err(row_err(format!("invalid gps_valid `{other}`"))),
        };
        out.push(RawSample {
            timestamp_ms,
            steering_deg,
            speed_mps,
            gps_valid,
        });
    }
    Ok(out)
}

/// Empty and NaN/inf cells are missing; anything else must be a number.
fn parse_optional(cell: &str) -> std::result::Result<Option<f64>, String> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("unparseable numeric cell `{cell}`"))?;
    Ok(v.is_finite().then_some(v))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_raw_csv<W: Write>(samples: &[RawSample], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<trip writer>", e);
    writeln!(w, "{}", TRIP_HEADER.join(",")).map_err(io)?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{}",
            s.timestamp_ms,
            fmt_opt(s.steering_deg),
            fmt_opt(s.speed_mps),
            u8::from(s.gps_valid)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes a resampled trip in the trip CSV format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_trip_csv(trip: &UniformTrip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let samples: Vec<RawSample> = trip
        .timestamps()
        .zip(trip.steering.iter().zip(&trip.velocity))
        .map(|(t, (&s, &v))| RawSample::new(t, s, v))
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_raw_csv(&samples, file)
}

/// Keeps complete, GPS-valid rows with strictly increasing timestamps.
pub fn clean_samples(raw: &[RawSample]) -> Vec<RawSample> {
    let mut out: Vec<RawSample> = Vec::with_capacity(raw.len());
    for s in raw.iter().filter(|s| s.is_complete()) {
        if out.last().is_some_and(|prev| s.timestamp_ms <= prev.timestamp_ms) {
            continue;
        }
        out.push(*s);
    }
    out
}

/// Splits cleaned samples wherever consecutive timestamps are more than
/// `max_gap_ms` apart.
pub fn split_on_gaps(clean: &[RawSample], max_gap_ms: f64) -> Vec<Vec<RawSample>> {
    let mut pieces = Vec::new();
    let mut current: Vec<RawSample> = Vec::new();
    for s in clean {
        if current
            .last()
            .is_some_and(|prev| s.timestamp_ms - prev.timestamp_ms > max_gap_ms)
        {
            pieces.push(std::mem::take(&mut current));
        }
        current.push(*s);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

/// Lagrange quadratic through three nodes, evaluated at `t`.
///
/// At a node the matching basis polynomial is exactly one and the others
/// exactly zero, so node values are reproduced bit for bit.
fn quadratic(t: f64, ts: [f64; 3], ys: [f64; 3]) -> f64 {
    let [t0, t1, t2] = ts;
    let l0 = ((t - t1) * (t - t2)) / ((t0 - t1) * (t0 - t2));
    let l1 = ((t - t0) * (t - t2)) / ((t1 - t0) * (t1 - t2));
    let l2 = ((t - t0) * (t - t1)) / ((t2 - t0) * (t2 - t1));
    ys[0] * l0 + ys[1] * l1 + ys[2] * l2
}

/// Resamples cleaned samples onto the 100 ms grid by piecewise quadratic
/// interpolation.
///
/// For a grid point inside `[t_i, t_{i+1}]` the triple is centred on whichever
/// of the two nodes is closer; centres are clamped so the first and last
/// intervals use the nearest available triple. Grid points outside the
/// recorded span are not produced.
pub fn resample_uniform(clean: &[RawSample], trip_id: &str, driver_id: u32) -> Result<UniformTrip> {
    if clean.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "trip {trip_id}: {} samples, need at least 3",
            clean.len()
        )));
    }
    if clean.windows(2).any(|w| w[1].timestamp_ms <= w[0].timestamp_ms) {
        return Err(Error::InsufficientData(format!(
            "trip {trip_id}: timestamps not strictly increasing"
        )));
    }
    let ts: Vec<f64> = clean.iter().map(|s| s.timestamp_ms).collect();
    let steer: Vec<f64> = clean.iter().map(|s| s.steering_deg.unwrap_or(f64::NAN)).collect();
    let speed: Vec<f64> = clean.iter().map(|s| s.speed_mps.unwrap_or(f64::NAN)).collect();
    if steer.iter().chain(&speed).any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData(format!(
            "trip {trip_id}: samples must be cleaned before resampling"
        )));
    }

    let first = ts[0];
    let last = ts[ts.len() - 1];
    let start_ms = (first / GRID_MS).ceil() * GRID_MS;
    let n_grid = if start_ms > last {
        0
    } else {
        ((last - start_ms) / GRID_MS).floor() as usize + 1
    };

    let mut steering = Vec::with_capacity(n_grid);
    let mut velocity = Vec::with_capacity(n_grid);
    let mut i = 0usize;
    for k in 0..n_grid {
        let t = start_ms + k as f64 * GRID_MS;
        while i + 2 < ts.len() && ts[i + 1] < t {
            i += 1;
        }
        let centre = if t - ts[i] <= ts[i + 1] - t { i } else { i + 1 };
        let c = centre.clamp(1, ts.len() - 2);
        let tt = [ts[c - 1], ts[c], ts[c + 1]];
        steering.push(quadratic(t, tt, [steer[c - 1], steer[c], steer[c + 1]]));
        velocity.push(quadratic(t, tt, [speed[c - 1], speed[c], speed[c + 1]]));
    }

    Ok(UniformTrip {
        trip_id: trip_id.to_string(),
        driver_id,
        start_ms,
        steering,
        velocity,
    })
}

/// Returns the trip if it lasts at least five minutes, `None` if dismissed.
pub fn enforce_min_length(trip: UniformTrip) -> Option<UniformTrip> {
    (trip.len() >= MIN_TRIP_SAMPLES).then_some(trip)
}

/// Row and trip accounting of [`preprocess`].
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct PreprocessReport {
    pub raw_rows: usize,
    pub removed_rows: usize,
    pub pieces: usize,
    pub dismissed_pieces: usize,
    pub kept_samples: usize,
}

/// Full per-recording pipeline: clean, split on long gaps, resample each
/// piece and drop pieces shorter than five minutes.
pub fn preprocess(raw: &[RawSample], trip_id: &str, driver_id: u32) -> (Vec<UniformTrip>, PreprocessReport) {
    let clean = clean_samples(raw);
    let mut report = PreprocessReport {
        raw_rows: raw.len(),
        removed_rows: raw.len() - clean.len(),
        ..Default::default()
    };
    let pieces = split_on_gaps(&clean, MAX_GAP_MS);
    report.pieces = pieces.len();
    let mut trips = Vec::new();
    let multi = pieces.len() > 1;
    for (k, piece) in pieces.iter().enumerate() {
        let id = if multi {
            format!("{trip_id}#{k}")
        } else {
            trip_id.to_string()
        };
        match resample_uniform(piece, &id, driver_id).ok().and_then(enforce_min_length) {
            Some(trip) => {
                report.kept_samples += trip.len();
                trips.push(trip);
            }
            None => report.dismissed_pieces += 1,
        }
    }
    (trips, report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub driver_id: u32,
    pub trip_file: PathBuf,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable manifest header: {e}")))?;
    if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "expected manifest header `{}`",
            MANIFEST_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(0).unwrap_or("");
        let driver_id = id.parse().map_err(|_| Error::Row {
            line,
            reason: format!("invalid driver_id `{id}`"),
        })?;
        out.push(ManifestEntry {
            driver_id,
            trip_file: PathBuf::from(record.get(1).unwrap_or("")),
        });
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", MANIFEST_HEADER.join(",")).map_err(io)?;
    for e in entries {
        writeln!(w, "{},{}", e.driver_id, e.trip_file.display()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Outcome of loading a fleet directory.
#[derive(Debug, Clone)]
pub struct Fleet {
    /// Drivers sorted by id; trips in manifest order.
    pub drivers: Vec<DriverTrips>,
    pub reports: Vec<(String, PreprocessReport)>,
}

impl Fleet {
    pub fn trips(&self) -> impl Iterator<Item = &UniformTrip> {
        self.drivers.iter().flat_map(|d| d.trips.iter())
    }
}

/// Reads `manifest.csv` in `dir` and preprocesses every listed trip.
pub fn load_fleet(dir: impl AsRef<Path>) -> Result<Fleet> {
    let dir = dir.as_ref();
    let entries = read_manifest(dir.join("manifest.csv"))?;
    let mut drivers: Vec<DriverTrips> = Vec::new();
    let mut reports = Vec::new();
    for entry in &entries {
        let raw = parse_trip_csv(dir.join(&entry.trip_file))?;
        let trip_id = entry
            .trip_file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (trips, report) = preprocess(&raw, &trip_id, entry.driver_id);
        reports.push((trip_id, report));
        let slot = match drivers.iter().position(|d| d.driver_id == entry.driver_id) {
            Some(i) => i,
            None => {
                drivers.push(DriverTrips {
                    driver_id: entry.driver_id,
                    trips: Vec::new(),
                });
                drivers.len() - 1
            }
        };
        drivers[slot].trips.extend(trips);
    }
    drivers.sort_by_key(|d| d.driver_id);
    Ok(Fleet { drivers, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, s: Option<f64>, v: Option<f64>, gps: bool) -> RawSample {
        RawSample {
            timestamp_ms: t,
            steering_deg: s,
            speed_mps: v,
            gps_valid: gps,
        }
    }

    #[test]
    fn parses_rows_in_order() {
        let csv = "timestamp_ms,steering_deg,speed_mps,gps_valid\n0,1.5,10,1\n100,2.5,11,1\n200,-3,12,0\n";
        let rows = read_trip_csv(csv.as_bytes()).unwrap();
        assert_eq!(
            rows,
            vec![
                sample(0.0, Some(1.5), Some(10.0), true),
                sample(100.0, Some(2.5), Some(11.0), true),
                sample(200.0, Some(-3.0), Some(12.0), false),
            ]
        );
    }

    #[test]
    fn empty_data_section() {
        let rows = read_trip_csv("timestamp_ms,steering_deg,speed_mps,gps_valid\n".as_bytes()).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn blank_and_nan_cells_are_missing() {
        let csv = "timestamp_ms,steering_deg,speed_mps,gps_valid\n0,,10,1\n100,NaN,,1\n";
        let rows = read_trip_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows[0].steering_deg, None);
        assert_eq!(rows[0].speed_mps, Some(10.0));
        assert_eq!(rows[1].steering_deg, None);
        assert_eq!(rows[1].speed_mps, None);
    }

    #[test]
    fn header_mismatch_is_format_error() {
        let err = read_trip_csv("t,steer,speed,gps\n0,1,2,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let csv = "timestamp_ms,steering_deg,speed_mps,gps_valid\n0,1,2,1\nxx,1,2,1\n";
        match read_trip_csv(csv.as_bytes()).unwrap_err() {
            Error::Row { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_trip_csv("/nonexistent/trip.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn clean_drops_incomplete_rows() {
        let rows = vec![
            sample(0.0, Some(1.0), Some(5.0), true),
            sample(100.0, None, Some(5.0), true),
            sample(200.0, Some(1.0), Some(5.0), false),
            sample(300.0, Some(2.0), Some(5.0), true),
        ];
        let kept = clean_samples(&rows);
        assert_eq!(kept, vec![rows[0], rows[3]]);
    }

    #[test]
    fn clean_drops_duplicate_timestamps() {
        let rows = vec![
            sample(0.0, Some(1.0), Some(5.0), true),
            sample(100.0, Some(2.0), Some(5.0), true),
            sample(100.0, Some(3.0), Some(5.0), true),
        ];
        assert_eq!(clean_samples(&rows), rows[..2].to_vec());
    }

    #[test]
    fn clean_identity_on_valid_rows() {
        let rows: Vec<_> = (0..5).map(|k| RawSample::new(k as f64 * 90.0, 1.0, 2.0)).collect();
        assert_eq!(clean_samples(&rows), rows);
    }

    #[test]
    fn resample_reproduces_grid_nodes() {
        let rows: Vec<_> = (0..50)
            .map(|k| RawSample::new(k as f64 * 100.0, (k as f64 * 0.37).sin() * 40.0, 10.0 + k as f64))
            .collect();
        let trip = resample_uniform(&rows, "t", 0).unwrap();
        assert_eq!(trip.len(), 50);
        for (k, r) in rows.iter().enumerate() {
            assert_eq!(trip.steering[k], r.steering_deg.unwrap());
            assert_eq!(trip.velocity[k], r.speed_mps.unwrap());
        }
    }

    #[test]
    fn resample_constant() {
        let times = [0.0, 70.0, 230.0, 260.0, 410.0, 555.0, 720.0];
        let rows: Vec<_> = times.iter().map(|&t| RawSample::new(t, 12.0, 3.0)).collect();
        let trip = resample_uniform(&rows, "c", 1).unwrap();
        assert_eq!(trip.len(), 8);
        assert!(trip.steering.iter().all(|&s| (s - 12.0).abs() < 1e-12));
    }

    #[test]
    fn resample_no_extrapolation() {
        let rows: Vec<_> = [30.0, 170.0, 260.0, 390.0]
            .iter()
            .map(|&t| RawSample::new(t, 0.0, 0.0))
            .collect();
        let trip = resample_uniform(&rows, "x", 0).unwrap();
        assert_eq!(trip.start_ms, 100.0);
        let ts: Vec<f64> = trip.timestamps().collect();
        assert_eq!(ts, vec![100.0, 200.0, 300.0]);
    }

    #[test]
    fn resample_needs_three_samples() {
        let rows = vec![RawSample::new(0.0, 1.0, 1.0), RawSample::new(100.0, 1.0, 1.0)];
        assert!(matches!(
            resample_uniform(&rows, "x", 0),
            Err(Error::InsufficientData(_))
        ));
    }

    fn trip_of_len(n: usize) -> UniformTrip {
        UniformTrip {
            trip_id: "t".into(),
            driver_id: 0,
            start_ms: 0.0,
            steering: vec![0.0; n],
            velocity: vec![0.0; n],
        }
    }

    #[test]
    fn min_length_boundary() {
        assert!(enforce_min_length(trip_of_len(2999)).is_none());
        assert!(enforce_min_length(trip_of_len(3000)).is_some());
        assert!(enforce_min_length(trip_of_len(36000)).is_some());
    }

    #[test]
    fn long_gap_splits_recording() {
        let mut rows: Vec<_> = (0..10).map(|k| RawSample::new(k as f64 * 100.0, 0.0, 0.0)).collect();
        rows.extend((0..10).map(|k| RawSample::new(5000.0 + k as f64 * 100.0, 0.0, 0.0)));
        let pieces = split_on_gaps(&rows, MAX_GAP_MS);
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[0].len(), 10);
        // a 2 s gap exactly is bridged
        let rows: Vec<_> = [0.0, 100.0, 2100.0].iter().map(|&t| RawSample::new(t, 0.0, 0.0)).collect();
        assert_eq!(split_on_gaps(&rows, MAX_GAP_MS).len(), 1);
    }

    #[test]
    fn preprocess_accounts_for_rows() {
        let mut rows: Vec<_> = (0..3100).map(|k| RawSample::new(k as f64 * 100.0, 1.0, 2.0)).collect();
        rows[10].gps_valid = false;
        rows[20].steering_deg = None;
        let (trips, report) = preprocess(&rows, "t", 4);
        assert_eq!(report.removed_rows, 2);
        assert_eq!(trips.len(), 1);
        assert_eq!(trips[0].len(), 3100);
        assert_eq!(trips[0].driver_id, 4);
    }
}

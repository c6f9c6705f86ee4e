use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use steerid_core::eval::{self, default_sweep_windows, make_split, sweep_argmax, window_sweep, Protocol, SweepConfig, SweepMetric};
use steerid_core::features::window_samples;
use steerid_core::forest::{fit_forest, forest_confusion, pool_rows, save_forest, ForestConfig};
use steerid_core::gru::{load_checkpoint, save_checkpoint};
use steerid_core::ingest::{load_fleet, write_manifest as write_trip_manifest, write_trip_csv, ManifestEntry};
use steerid_core::stationarity::{analyze_fleet, recommend_window};
use steerid_core::synth::gen_fleet;
use steerid_core::train::train;
use steerid_core::{Activation, DriverTrips, ModelConfig, Preset, SynthConfig, TrainConfig};

use crate::args::*;
use crate::output::*;
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .context("configuring worker threads")?;
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Ingest(a) => ingest(&a),
        Command::Stationarity(a) => stationarity(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Baseline(a) => baseline(&a),
    }
}

/// Creates `out`, refusing to write into the input directory.
fn prepare_out(out: &Path, data: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(data) = data {
        let same = match (out.canonicalize(), data.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        if same {
            return Err(usage("--out must differ from --data"));
        }
    }
    Ok(())
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected `key = value`", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| usage(format!("config key `{key}`: invalid value `{v}`")))
}

fn apply_synth_kv(cfg: &mut SynthConfig, kv: &BTreeMap<String, String>) -> Result<()> {
    for (k, v) in kv {
        match k.as_str() {
            "seed" => cfg.seed = parse_value(k, v)?,
            "drivers" | "n_drivers" => cfg.n_drivers = parse_value(k, v)?,
            "trips_per_driver" => cfg.trips_per_driver = parse_value(k, v)?,
            "trip_min_minutes" => cfg.trip_min_s = parse_value::<f64>(k, v)? * 60.0,
            "trip_max_minutes" => cfg.trip_max_s = parse_value::<f64>(k, v)? * 60.0,
            "preset" => cfg.preset = v.parse::<Preset>()?,
            "jitter_ms" => cfg.jitter_ms = parse_value(k, v)?,
            "missing_rate" => cfg.missing_rate = parse_value(k, v)?,
            "gps_outage_rate" => cfg.gps_outage_rate = parse_value(k, v)?,
            "min_separation_hz" => cfg.min_separation_hz = parse_value(k, v)?,
            "pole_radius" => cfg.pole_radius = parse_value(k, v)?,
            "resonance_min_hz" => set_range(cfg, Some(parse_value(k, v)?), None),
            "resonance_max_hz" => set_range(cfg, None, Some(parse_value(k, v)?)),
            other => return Err(usage(format!("unknown config key `{other}`"))),
        }
    }
    Ok(())
}

/// Overrides either end of the resonance interval, keeping the other.
fn set_range(cfg: &mut SynthConfig, lo: Option<f64>, hi: Option<f64>) {
    if lo.is_some() || hi.is_some() {
        let (l, h) = cfg.resonance_range();
        cfg.resonance_range_hz = Some((lo.unwrap_or(l), hi.unwrap_or(h)));
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        apply_synth_kv(&mut cfg, &parse_kv(&text)?)?;
    }
    let set = |slot: &mut f64, v: Option<f64>, scale: f64| {
        if let Some(v) = v {
            *slot = v * scale;
        }
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.drivers {
        cfg.n_drivers = v;
    }
    if let Some(v) = a.trips_per_driver {
        cfg.trips_per_driver = v;
    }
    set(&mut cfg.trip_min_s, a.trip_min_minutes, 60.0);
    set(&mut cfg.trip_max_s, a.trip_max_minutes, 60.0);
    set(&mut cfg.jitter_ms, a.jitter_ms, 1.0);
    set(&mut cfg.missing_rate, a.missing_rate, 1.0);
    set(&mut cfg.gps_outage_rate, a.gps_outage_rate, 1.0);
    set(&mut cfg.min_separation_hz, a.min_separation_hz, 1.0);
    set(&mut cfg.pole_radius, a.pole_radius, 1.0);
    if let Some(p) = a.preset {
        cfg.preset = match p {
            PresetArg::Separable => Preset::Separable,
            PresetArg::Hard => Preset::Hard,
        };
    }
    set_range(&mut cfg, a.resonance_min_hz, a.resonance_max_hz);
    prepare_out(&a.out, None)?;
    let summary = gen_fleet(&cfg, &a.out)?;
    for (p, m) in summary.profiles.iter().zip(&summary.generated_minutes) {
        log::info!("driver {}: resonance {:.3} Hz, {:.1} min", p.driver_id, p.resonance_hz, m);
    }
    write_manifest(&a.out, "synth", Some(cfg.seed), &cfg, &["manifest.csv", "profiles.json", "trips/"])
}

fn load_drivers(data: &Path, limit: Option<usize>) -> Result<Vec<DriverTrips>> {
    let mut drivers = load_fleet(data)?.drivers;
    if let Some(k) = limit {
        if k < 2 || k > drivers.len() {
            return Err(usage(format!("--drivers {k}: fleet has {} drivers, need 2..={}", drivers.len(), drivers.len())));
        }
        drivers.truncate(k);
    }
    Ok(drivers)
}

fn protocol(p: &ProtocolArgs) -> Protocol {
    Protocol {
        train_min: p.train_min,
        test_min: p.test_min,
        segment_min: p.segment_min,
    }
}

fn model_config(m: &ModelArgs, n_classes: usize, input_dim: usize) -> ModelConfig {
    ModelConfig {
        hidden: m.hidden,
        keep_prob: m.keep_prob,
        l2_lambda: m.l2,
        learning_rate: m.lr,
        activation: match m.candidate_activation {
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Tanh => Activation::Tanh,
        },
        ..ModelConfig::new(n_classes, input_dim)
    }
}

fn train_config(m: &ModelArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        max_steps: m.steps,
        batch_size: m.batch_size,
        eval_every: m.eval_every,
        patience: m.patience,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Serialize)]
struct IngestDriver {
    driver_id: u32,
    trips: usize,
    minutes: f64,
}

#[derive(Serialize)]
struct IngestReport<'a> {
    drivers: Vec<IngestDriver>,
    recordings: Vec<IngestRecording<'a>>,
}

#[derive(Serialize)]
struct IngestRecording<'a> {
    trip_id: &'a str,
    #[serde(flatten)]
    report: &'a steerid_core::ingest::PreprocessReport,
}

fn ingest(a: &IngestArgs) -> Result<()> {
    prepare_out(&a.io.out, Some(&a.io.data))?;
    let fleet = load_fleet(&a.io.data)?;
    let trips_dir = a.io.out.join("trips");
    std::fs::create_dir_all(&trips_dir)?;
    let mut entries = Vec::new();
    for trip in fleet.trips() {
        let rel = Path::new("trips").join(format!("{}.csv", trip.trip_id.replace('#', "_p")));
        write_trip_csv(trip, a.io.out.join(&rel))?;
        entries.push(ManifestEntry {
            driver_id: trip.driver_id,
            trip_file: rel,
        });
    }
    write_trip_manifest(&entries, a.io.out.join("manifest.csv"))?;
    let report = IngestReport {
        drivers: fleet
            .drivers
            .iter()
            .map(|d| IngestDriver {
                driver_id: d.driver_id,
                trips: d.trips.len(),
                minutes: d.total_samples() as f64 / steerid_core::RATE_HZ / 60.0,
            })
            .collect(),
        recordings: fleet
            .reports
            .iter()
            .map(|(id, r)| IngestRecording { trip_id: id, report: r })
            .collect(),
    };
    write_json(&a.io.out, "ingest_report.json", &report)?;
    write_manifest(&a.io.out, "ingest", None, a, &["manifest.csv", "trips/", "ingest_report.json"])
}

fn stationarity(a: &StationarityArgs) -> Result<()> {
    prepare_out(&a.io.out, Some(&a.io.data))?;
    let fleet = load_fleet(&a.io.data)?;
    let report = analyze_fleet(fleet.trips().map(|t| (t.trip_id.as_str(), t.steering.as_slice())))?;
    let rec = recommend_window(&report.histogram);
    write_json(&a.io.out, "stationarity.json", &report)?;
    write_json(&a.io.out, "window.json", &rec)?;
    let mut csv = String::from("lag_s,count\n");
    for (i, c) in report.histogram.counts.iter().enumerate() {
        csv.push_str(&format!("{},{c}\n", (i as f64 * report.histogram.bin_width * 10.0).round() / 10.0));
    }
    write_text(&a.io.out, "lag_histogram.csv", &csv)?;
    write_manifest(
        &a.io.out,
        "stationarity",
        None,
        a,
        &["stationarity.json", "window.json", "lag_histogram.csv"],
    )
}

#[derive(Serialize)]
struct Metrics<'a> {
    window_s: f64,
    n_classes: usize,
    test_segments: usize,
    final_vote_accuracy: f64,
    mean_over_votes_accuracy: f64,
    curve: Vec<CurvePoint>,
    confusion: ConfusionJson<'a>,
}

fn metrics<'a>(window_s: f64, ev: &'a eval::Evaluation, ids: &'a [u32]) -> Metrics<'a> {
    Metrics {
        window_s,
        n_classes: ids.len(),
        test_segments: ev.curve.n_segments,
        final_vote_accuracy: ev.curve.final_vote(),
        mean_over_votes_accuracy: ev.curve.mean_over_votes(),
        curve: curve_points(&ev.curve),
        confusion: ConfusionJson::new(&ev.confusion, ids),
    }
}

fn write_evaluation(out: &Path, window_s: f64, ev: &eval::Evaluation, ids: &[u32]) -> Result<()> {
    write_json(out, "metrics.json", &metrics(window_s, ev, ids))?;
    write_text(out, "accuracy_curve.csv", &curve_csv(&ev.curve))?;
    write_text(out, "confusion.csv", &confusion_csv(&ev.confusion, ids))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let w = window_samples(a.window_s)?;
    prepare_out(&a.io.out, Some(&a.io.data))?;
    let drivers = load_drivers(&a.io.data, a.protocol.drivers)?;
    let plan = make_split(&drivers, &protocol(&a.protocol), a.seed)?;
    let (tr, te) = plan.matrices(w)?;
    let model = model_config(&a.model, plan.n_classes(), w + 1);
    let outcome = train(&tr, None, model, &train_config(&a.model, a.seed))?;
    save_checkpoint(&outcome.params, &outcome.optimizer, a.io.out.join("model.bin"))?;
    let ev = eval::evaluate(&outcome.params, &te)?;
    write_evaluation(&a.io.out, a.window_s, &ev, &plan.driver_ids)?;
    write_json(&a.io.out, "split.json", &plan.summary())?;
    write_json(
        &a.io.out,
        "training.json",
        &serde_json::json!({
            "steps_run": outcome.steps_run,
            "best_step": outcome.best_step,
            "stopped_early": outcome.stopped_early,
            "history": outcome.history,
        }),
    )?;
    write_manifest(
        &a.io.out,
        "train",
        Some(a.seed),
        a,
        &["model.bin", "model.json", "metrics.json", "accuracy_curve.csv", "confusion.csv", "split.json", "training.json"],
    )
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    prepare_out(&a.io.out, Some(&a.io.data))?;
    let (params, _) = load_checkpoint(&a.model)?;
    let w = params.config.input_dim.checked_sub(1).filter(|&w| w >= 4).ok_or_else(|| {
        steerid_core::Error::Checkpoint(format!("input dim {} is not a window feature size", params.config.input_dim))
    })?;
    let drivers = load_drivers(&a.io.data, a.protocol.drivers)?;
    let plan = make_split(&drivers, &protocol(&a.protocol), a.seed)?;
    let (_, te) = plan.matrices(w)?;
    let ev = eval::evaluate(&params, &te)?;
    let window_s = w as f64 / steerid_core::RATE_HZ;
    write_evaluation(&a.io.out, window_s, &ev, &plan.driver_ids)?;
    write_manifest(&a.io.out, "evaluate", Some(a.seed), a, &["metrics.json", "accuracy_curve.csv", "confusion.csv"])
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let windows = a.windows.clone().unwrap_or_else(default_sweep_windows);
    for &w in &windows {
        window_samples(w)?;
    }
    prepare_out(&a.io.out, Some(&a.io.data))?;
    let drivers = load_drivers(&a.io.data, a.protocol.drivers)?;
    let cfg = SweepConfig {
        windows_s: windows,
        repetitions: a.repetitions,
        drivers_per_set: a.drivers_per_set,
        protocol: protocol(&a.protocol),
        model: model_config(&a.model, 2, 2),
        train: train_config(&a.model, a.seed),
        metric: match a.metric {
            MetricArg::FinalVote => SweepMetric::FinalVote,
            MetricArg::MeanOverVotes => SweepMetric::MeanOverVotes,
        },
        seed: a.seed,
    };
    let rows = window_sweep(&drivers, &cfg)?;
    write_json(
        &a.io.out,
        "sweep.json",
        &serde_json::json!({
            "metric": a.metric,
            "argmax_window_s": sweep_argmax(&rows),
            "rows": rows,
        }),
    )?;
    write_text(&a.io.out, "sweep.csv", &sweep_csv(&rows))?;
    write_manifest(&a.io.out, "sweep", Some(a.seed), a, &["sweep.json", "sweep.csv"])
}

fn baseline(a: &BaselineArgs) -> Result<()> {
    let w = window_samples(a.window_s)?;
    prepare_out(&a.io.out, Some(&a.io.data))?;
    let drivers = load_drivers(&a.io.data, a.protocol.drivers)?;
    let plan = make_split(&drivers, &protocol(&a.protocol), a.seed)?;
    let (x, y) = pool_rows(&plan.train, w)?;
    let cfg = ForestConfig {
        n_trees: a.trees,
        max_depth: a.max_depth,
        min_node: a.min_node,
        mtry: None,
        seed: a.seed,
    };
    let forest = fit_forest(&x, &y, plan.n_classes(), &cfg)?;
    save_forest(&forest, a.io.out.join("forest.bin"))?;
    let cm = forest_confusion(&forest, &plan.test, w)?;
    write_json(
        &a.io.out,
        "baseline.json",
        &serde_json::json!({
            "window_s": a.window_s,
            "n_classes": plan.n_classes(),
            "test_segments": cm.total(),
            "segment_accuracy": cm.accuracy(),
            "oob_window_accuracy": forest.oob_accuracy,
            "confusion": ConfusionJson::new(&cm, &plan.driver_ids),
        }),
    )?;
    write_text(&a.io.out, "confusion.csv", &confusion_csv(&cm, &plan.driver_ids))?;
    write_manifest(&a.io.out, "baseline", Some(a.seed), a, &["forest.bin", "baseline.json", "confusion.csv"])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_config() {
        let kv = parse_kv("# fleet\nseed = 4\ndrivers=3 # inline\n\npreset = hard\ntrip_min_minutes = 10\n").unwrap();
        let mut cfg = SynthConfig::default();
        apply_synth_kv(&mut cfg, &kv).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.n_drivers, 3);
        assert_eq!(cfg.preset, Preset::Hard);
        assert_eq!(cfg.trip_min_s, 600.0);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let kv = parse_kv("colour = red").unwrap();
        let err = apply_synth_kv(&mut SynthConfig::default(), &kv).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(parse_kv("no equals sign").is_err());
    }
}

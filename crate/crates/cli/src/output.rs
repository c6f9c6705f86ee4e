use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use steerid_core::eval::{AccuracyCurve, ConfusionMatrix, SweepRow};

pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config: &'a T,
    artifacts: &'a [&'a str],
}

/// Writes `run_manifest.json`: the full configuration needed to rerun the
/// command and reproduce `artifacts`.
pub fn write_manifest<T: Serialize>(dir: &Path, command: &str, seed: Option<u64>, config: &T, artifacts: &[&str]) -> Result<()> {
    write_json(
        dir,
        "run_manifest.json",
        &RunManifest {
            tool: "steerid",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            artifacts,
        },
    )
}

pub fn curve_csv(curve: &AccuracyCurve) -> String {
    let mut s = String::from("k,acc\n");
    for (k, a) in curve.points() {
        let _ = writeln!(s, "{k},{a}");
    }
    s
}

/// Long format: one row per cell with count and row-normalised value.
pub fn confusion_csv(cm: &ConfusionMatrix, ids: &[u32]) -> String {
    let norm = cm.normalized();
    let mut s = String::from("true_driver,predicted_driver,count,normalized\n");
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            let _ = writeln!(s, "{},{},{c},{}", ids[i], ids[j], norm[i][j]);
        }
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("window_s,mean_acc,std_acc\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.window_s, r.mean_acc, r.std_acc);
    }
    s
}

#[derive(Serialize)]
pub struct ConfusionJson<'a> {
    pub driver_ids: &'a [u32],
    pub counts: &'a [Vec<u64>],
    pub normalized: Vec<Vec<f64>>,
}

impl<'a> ConfusionJson<'a> {
    pub fn new(cm: &'a ConfusionMatrix, ids: &'a [u32]) -> Self {
        ConfusionJson {
            driver_ids: ids,
            counts: &cm.counts,
            normalized: cm.normalized(),
        }
    }
}

#[derive(Serialize)]
pub struct CurvePoint {
    pub k: usize,
    pub acc: f64,
}

pub fn curve_points(curve: &AccuracyCurve) -> Vec<CurvePoint> {
    curve.points().map(|(k, acc)| CurvePoint { k, acc }).collect()
}

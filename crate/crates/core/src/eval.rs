//! Train/test protocol, cumulative vote decisions, accuracy over observation
//! time, confusion matrices and the window-size sweep.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_segment_matrix, segment_stream, RawSegment, SegmentMatrix};
use crate::gru::{argmax, encode_segment, Mode, ModelConfig, ModelParams, VoteVector};
use crate::ingest::DriverTrips;
use crate::stats;
use crate::synth::derive_seed;
use crate::train::{train, TrainConfig};

/// Minimum durations of the train/test protocol, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub train_min: f64,
    pub test_min: f64,
    pub segment_min: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            train_min: 240.0,
            test_min: 30.0,
            segment_min: 15.0,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_min > 0.0 && self.train_min > 0.0 && self.test_min > 0.0) {
            return Err(Error::Config("protocol durations must be positive".into()));
        }
        Ok(())
    }

    /// Segments needed to cover `minutes`, tolerant to float noise.
    fn segments_for(&self, minutes: f64) -> usize {
        ((minutes / self.segment_min) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn min_train_segments(&self) -> usize {
        self.segments_for(self.train_min)
    }

    pub fn test_segments(&self) -> usize {
        self.segments_for(self.test_min)
    }

    pub fn segment_samples(&self) -> usize {
        crate::seconds_to_samples(self.segment_min * 60.0)
    }
}

/// Per-driver train and test segments. Class `c` is `driver_ids[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub seed: u64,
    pub driver_ids: Vec<u32>,
    pub train: Vec<Vec<RawSegment>>,
    pub test: Vec<Vec<RawSegment>>,
}

/// Stream offsets of one driver's segments, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub driver_id: u32,
    pub train_spans: Vec<(usize, usize)>,
    pub test_spans: Vec<(usize, usize)>,
    pub train_minutes: f64,
    pub test_minutes: f64,
}

fn minutes(segs: &[RawSegment]) -> f64 {
    segs.iter().map(RawSegment::len).sum::<usize>() as f64 / crate::RATE_HZ / 60.0
}

impl SplitPlan {
    pub fn n_classes(&self) -> usize {
        self.driver_ids.len()
    }

    pub fn summary(&self) -> Vec<SplitSummary> {
        let spans = |s: &[RawSegment]| s.iter().map(|x| (x.span().start, x.span().end)).collect();
        self.driver_ids
            .iter()
            .enumerate()
            .map(|(c, &id)| SplitSummary {
                driver_id: id,
                train_spans: spans(&self.train[c]),
                test_spans: spans(&self.test[c]),
                train_minutes: minutes(&self.train[c]),
                test_minutes: minutes(&self.test[c]),
            })
            .collect()
    }

    /// Checks minimums, per-driver balance and train/test disjointness.
    pub fn verify(&self) -> Result<()> {
        let p = &self.protocol;
        let n_train = self.train.first().map_or(0, Vec::len);
        let n_test = self.test.first().map_or(0, Vec::len);
        for (c, &id) in self.driver_ids.iter().enumerate() {
            let (tr, te) = (&self.train[c], &self.test[c]);
            if tr.len() != n_train || te.len() != n_test {
                return Err(Error::Balance {
                    driver: id,
                    reason: format!("{} train / {} test segments, expected {n_train} / {n_test}", tr.len(), te.len()),
                });
            }
            if minutes(tr) + 1e-9 < p.train_min || minutes(te) + 1e-9 < p.test_min {
                return Err(Error::Balance {
                    driver: id,
                    reason: format!("{:.1} train / {:.1} test minutes", minutes(tr), minutes(te)),
                });
            }
            for a in tr {
                for b in te {
                    let (x, y) = (a.span(), b.span());
                    if x.start < y.end && y.start < x.end {
                        return Err(Error::Balance {
                            driver: id,
                            reason: format!("train span {x:?} overlaps test span {y:?}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Feature matrices of both pools for windows of `w` samples.
    pub fn matrices(&self, w: usize) -> Result<(Vec<Vec<SegmentMatrix>>, Vec<Vec<SegmentMatrix>>)> {
        let build = |pool: &[Vec<RawSegment>]| -> Result<Vec<Vec<SegmentMatrix>>> {
            pool.iter()
                .enumerate()
                .map(|(c, segs)| segs.par_iter().map(|s| build_segment_matrix(s, c, w)).collect())
                .collect()
        };
        Ok((build(&self.train)?, build(&self.test)?))
    }
}

/// Chronological split: the last segments of each driver's stream form the
/// test pool, all earlier ones the training pool. Training pools are then
/// downsampled (seeded, order kept) to the smallest driver's count.
pub fn make_split(drivers: &[DriverTrips], protocol: &Protocol, seed: u64) -> Result<SplitPlan> {
    protocol.validate()?;
    if drivers.len() < 2 {
        return Err(Error::Config(format!("need at least 2 drivers, got {}", drivers.len())));
    }
    let n_test = protocol.test_segments();
    let n_train_min = protocol.min_train_segments();
    let seg_len = protocol.segment_samples();

    let mut train = Vec::with_capacity(drivers.len());
    let mut test = Vec::with_capacity(drivers.len());
    for d in drivers {
        let mut segs = segment_stream(d, seg_len);
        if segs.len() < n_train_min + n_test {
            return Err(Error::Balance {
                driver: d.driver_id,
                reason: format!(
                    "{:.1} min of usable data gives {} segments of {} min, need {} train + {} test",
                    d.total_samples() as f64 / crate::RATE_HZ / 60.0,
                    segs.len(),
                    protocol.segment_min,
                    n_train_min,
                    n_test
                ),
            });
        }
        test.push(segs.split_off(segs.len() - n_test));
        train.push(segs);
    }
    let target = train.iter().map(Vec::len).min().expect("at least two drivers");
    for (d, segs) in drivers.iter().zip(train.iter_mut()) {
        if segs.len() > target {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(d.driver_id), 3));
            let mut keep = sample(&mut rng, segs.len(), target).into_vec();
            keep.sort_unstable();
            let all = std::mem::take(segs);
            let mut keep = keep.into_iter().peekable();
            *segs = all
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.next_if_eq(i).is_some())
                .map(|(_, s)| s)
                .collect();
        }
    }
    let plan = SplitPlan {
        protocol: *protocol,
        seed,
        driver_ids: drivers.iter().map(|d| d.driver_id).collect(),
        train,
        test,
    };
    plan.verify()?;
    Ok(plan)
}

/// Argmax of the elementwise sum of `votes`, lowest class index on ties.
pub fn cumulative_decision(votes: &[VoteVector]) -> Result<usize> {
    let first = votes
        .first()
        .ok_or_else(|| Error::EmptyInput("no votes to aggregate".into()))?;
    let mut sum = vec![0.0; first.0.len()];
    for v in votes {
        sum.iter_mut().zip(&v.0).for_each(|(s, p)| *s += p);
    }
    Ok(argmax(&sum))
}

/// Vote sequence of one test segment with its true class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSegment {
    pub label: usize,
    pub votes: Vec<VoteVector>,
}

/// Eval-mode votes of every test segment, computed in parallel.
pub fn score_segments(params: &ModelParams, test: &[Vec<SegmentMatrix>]) -> Result<Vec<ScoredSegment>> {
    let all: Vec<&SegmentMatrix> = test.iter().flatten().collect();
    all.par_iter()
        .map(|seg| {
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            Ok(ScoredSegment {
                label: seg.label,
                votes: encode_segment(params, seg, Mode::Eval, &mut unused)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub n_classes: usize,
    pub n_segments: usize,
    /// `accuracy[k - 1]` is the accuracy of the decision after `k` votes.
    pub accuracy: Vec<f64>,
}

impl AccuracyCurve {
    /// Accuracy after all votes of a segment.
    pub fn final_vote(&self) -> f64 {
        self.accuracy.last().copied().unwrap_or(0.0)
    }

    /// Accuracy averaged over vote indices.
    pub fn mean_over_votes(&self) -> f64 {
        stats::mean(&self.accuracy)
    }

    /// Spearman correlation between `k` and accuracy; `None` for a constant
    /// curve.
    pub fn trend(&self) -> Option<f64> {
        let ks: Vec<f64> = (1..=self.accuracy.len()).map(|k| k as f64).collect();
        stats::spearman(&ks, &self.accuracy)
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.accuracy.iter().enumerate().map(|(i, &a)| (i + 1, a))
    }
}

pub fn accuracy_over_time(scored: &[ScoredSegment], n_classes: usize) -> Result<AccuracyCurve> {
    let first = scored
        .first()
        .ok_or_else(|| Error::EmptyInput("no test segments".into()))?;
    let m = first.votes.len();
    if m == 0 || scored.iter().any(|s| s.votes.len() != m) {
        return Err(Error::Config("test segments must carry the same positive number of votes".into()));
    }
    let mut hits = vec![0usize; m];
    for s in scored {
        let mut sum = vec![0.0; n_classes];
        for (k, v) in s.votes.iter().enumerate() {
            if v.0.len() != n_classes {
                return Err(Error::Config(format!("vote has {} classes, expected {n_classes}", v.0.len())));
            }
            sum.iter_mut().zip(&v.0).for_each(|(a, p)| *a += p);
            hits[k] += usize::from(argmax(&sum) == s.label);
        }
    }
    let n = scored.len() as f64;
    Ok(AccuracyCurve {
        n_classes,
        n_segments: scored.len(),
        accuracy: hits.into_iter().map(|h| h as f64 / n).collect(),
    })
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (truth, pred) in pairs {
            if truth >= n_classes || pred >= n_classes {
                return Err(Error::Label {
                    label: truth.max(pred),
                    n_classes,
                });
            }
            counts[truth][pred] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total().max(1) as f64
    }

    /// Rows scaled to sum to 1; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    /// Classes whose diagonal entry is strictly the largest in their row.
    pub fn diagonal_dominant(&self) -> usize {
        self.counts
            .iter()
            .enumerate()
            .filter(|(i, row)| row.iter().enumerate().all(|(j, &c)| j == *i || c < row[*i]))
            .count()
    }
}

/// Confusion of the final-vote decisions.
pub fn confusion(scored: &[ScoredSegment], n_classes: usize) -> Result<ConfusionMatrix> {
    let pairs: Result<Vec<(usize, usize)>> = scored
        .iter()
        .map(|s| Ok((s.label, cumulative_decision(&s.votes)?)))
        .collect();
    ConfusionMatrix::from_pairs(n_classes, pairs?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub curve: AccuracyCurve,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(params: &ModelParams, test: &[Vec<SegmentMatrix>]) -> Result<Evaluation> {
    let n = test.len();
    params.ensure_compatible(n, test.iter().flatten().next().map_or(0, |m| m.dim))?;
    let scored = score_segments(params, test)?;
    Ok(Evaluation {
        curve: accuracy_over_time(&scored, n)?,
        confusion: confusion(&scored, n)?,
    })
}

/// Accuracy summary used for one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    /// Decision after all votes of a segment.
    FinalVote,
    /// Accuracy averaged over vote indices.
    #[default]
    MeanOverVotes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub windows_s: Vec<f64>,
    pub repetitions: usize,
    /// Drivers drawn per repetition; all drivers when `None`.
    pub drivers_per_set: Option<usize>,
    pub protocol: Protocol,
    /// Template; class count and input size are set per cell.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metric: SweepMetric,
    pub seed: u64,
}

/// The grid 2.5, 3.0, ..., 10.0 s.
pub fn default_sweep_windows() -> Vec<f64> {
    (0..16).map(|i| 2.5 + 0.5 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_s: f64,
    pub mean_acc: f64,
    /// Population standard deviation over repetitions.
    pub std_acc: f64,
    pub accuracies: Vec<f64>,
}

/// Seeded subset of `k` drivers, kept in id order.
fn pick_drivers(drivers: &[DriverTrips], k: usize, seed: u64) -> Vec<DriverTrips> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, drivers.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| drivers[i].clone()).collect()
}

/// Full retrain for every (window, repetition) cell. Repetition `r` uses the
/// same driver subset, split and training seed for every window.
pub fn window_sweep(drivers: &[DriverTrips], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.repetitions == 0 || cfg.windows_s.is_empty() {
        return Err(Error::Config("sweep needs at least one window and one repetition".into()));
    }
    for &w in &cfg.windows_s {
        crate::features::window_samples(w)?;
    }
    let k = cfg.drivers_per_set.unwrap_or(drivers.len());
    if k < 2 || k > drivers.len() {
        return Err(Error::Config(format!("cannot draw {k} of {} drivers", drivers.len())));
    }
    let plans: Vec<SplitPlan> = (0..cfg.repetitions)
        .map(|r| {
            let subset = pick_drivers(drivers, k, derive_seed(cfg.seed, r as u64, 4));
            make_split(&subset, &cfg.protocol, derive_seed(cfg.seed, r as u64, 5))
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..cfg.windows_s.len())
        .flat_map(|wi| (0..cfg.repetitions).map(move |r| (wi, r)))
        .collect();
    let accs: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(wi, r)| {
            let window_s = cfg.windows_s[wi];
            let w = crate::features::window_samples(window_s)?;
            let (tr, te) = plans[r].matrices(w)?;
            let model = ModelConfig {
                n_classes: k,
                input_dim: w + 1,
                ..cfg.model.clone()
            };
            let tcfg = TrainConfig {
                seed: derive_seed(cfg.seed, r as u64, 6),
                ..cfg.train.clone()
            };
            let out = train(&tr, None, model, &tcfg)?;
            let ev = evaluate(&out.params, &te)?;
            let acc = match cfg.metric {
                SweepMetric::FinalVote => ev.curve.final_vote(),
                SweepMetric::MeanOverVotes => ev.curve.mean_over_votes(),
            };
            log::info!("sweep window {window_s} s, repetition {r}: accuracy {acc:.4}");
            Ok(acc)
        })
        .collect();
    let accs: Vec<f64> = accs.into_iter().collect::<Result<_>>()?;
    Ok(cfg
        .windows_s
        .iter()
        .enumerate()
        .map(|(wi, &window_s)| {
            let a = accs[wi * cfg.repetitions..(wi + 1) * cfg.repetitions].to_vec();
            SweepRow {
                window_s,
                mean_acc: stats::mean(&a),
                std_acc: stats::std_dev(&a),
                accuracies: a,
            }
        })
        .collect())
}

/// Window with the highest mean accuracy, earliest on ties.
pub fn sweep_argmax(rows: &[SweepRow]) -> Option<f64> {
    let means: Vec<f64> = rows.iter().map(|r| r.mean_acc).collect();
    (!rows.is_empty()).then(|| rows[argmax(&means)].window_s)
}

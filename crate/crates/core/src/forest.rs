//! Random-forest baseline over per-window summary statistics.
//!
//! Split thresholds are stored as the largest training value that goes
//! left, so a strictly increasing rescaling of a feature, applied to train
//! and test alike, leaves every decision path unchanged.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::features::{window_starts, RawSegment};
use crate::gru::argmax;
use crate::stats;
use crate::synth::derive_seed;

pub const N_SUMMARY: usize = 7;

/// Steering statistics of one window plus its mean velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryFeatures {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub iqr: f64,
    pub mean_velocity: f64,
}

impl SummaryFeatures {
    pub fn to_array(&self) -> [f64; N_SUMMARY] {
        [self.mean, self.std, self.min, self.max, self.median, self.iqr, self.mean_velocity]
    }
}

/// Population standard deviation; quartiles by linear interpolation between
/// order statistics.
pub fn summarize_window(window: &[f64], velocity: &[f64]) -> Result<SummaryFeatures> {
    if window.len() < 2 {
        return Err(Error::TooShort {
            len: window.len(),
            needed: 2,
        });
    }
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryFeatures {
        mean: stats::mean(window),
        std: stats::std_dev(window),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median: stats::quantile_sorted(&sorted, 0.5),
        iqr: stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25),
        mean_velocity: stats::mean(velocity),
    })
}

/// Summary rows of the non-overlapping windows of `segment`.
pub fn summarize_segment(segment: &RawSegment, w: usize) -> Result<Vec<[f64; N_SUMMARY]>> {
    window_starts(segment.len(), w)
        .map(|s| summarize_window(&segment.steering[s..s + w], &segment.velocity[s..s + w]).map(|f| f.to_array()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Nodes with fewer samples become leaves.
    pub min_node: usize,
    /// Candidate features per split; `sqrt(d)` when `None`.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_node: 5,
            mtry: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        hist: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { hist } => return hist,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let h: Vec<f64> = self.leaf(x).iter().map(|&c| f64::from(c)).collect();
        argmax(&h)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub n_classes: usize,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag accuracy over samples left out by at least one tree.
    pub oob_accuracy: Option<f64>,
}

fn gini(counts: &[u32], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = f64::from(n);
    1.0 - counts.iter().map(|&c| (f64::from(c) / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<u32> {
        let mut h = vec![0u32; self.n_classes];
        for &i in idx {
            h[self.y[i]] += 1;
        }
        h
    }

    /// Best (feature, threshold, impurity decrease) over `mtry` candidates.
    fn best_split<R: Rng>(&self, idx: &[usize], parent: &[u32], rng: &mut R) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let n = idx.len() as u32;
        let parent_gini = gini(parent, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in sample(rng, d, self.mtry.min(d)).into_iter() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = vec![0u32; self.n_classes];
            let mut right = parent.to_vec();
            for k in 0..order.len() - 1 {
                let c = self.y[order[k]];
                left[c] += 1;
                right[c] -= 1;
                let (lo, hi) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let nl = k as u32 + 1;
                let nr = n - nl;
                let g = (f64::from(nl) * gini(&left, nl) + f64::from(nr) * gini(&right, nr)) / f64::from(n);
                let gain = parent_gini - g;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, lo, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let hist = self.histogram(&idx);
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { hist: hist.clone() });
        if pure || depth >= self.cfg.max_depth || idx.len() < self.cfg.min_node {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&idx, &hist, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Bagged Gini trees. Each tree draws its bootstrap sample and candidate
/// features from its own seed, so the forest is independent of the thread
/// count.
pub fn fit_forest(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &ForestConfig) -> Result<Forest> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Fit(format!("{} feature rows for {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Fit("feature rows must share a positive width".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite feature value".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Label { label: bad, n_classes });
    }
    let mut present = vec![false; n_classes];
    y.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Fit("training labels contain fewer than two classes".into()));
    }
    if cfg.n_trees == 0 || cfg.min_node == 0 {
        return Err(Error::Config("forest needs at least one tree and min_node >= 1".into()));
    }
    let mtry = cfg.mtry.unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1));
    let n = x.len();

    let grown: Vec<(Tree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, t as u64, 8));
            let mut in_bag = vec![false; n];
            let idx: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let mut b = Builder {
                x,
                y,
                n_classes,
                cfg,
                mtry,
                nodes: Vec::new(),
            };
            b.grow(idx, 0, &mut rng);
            (Tree { nodes: b.nodes }, in_bag)
        })
        .collect();

    let mut oob_votes = vec![vec![0u32; n_classes]; n];
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_votes[i][tree.predict(&x[i])] += 1;
        }
    }
    let (hits, seen) = oob_votes.iter().zip(y).fold((0usize, 0usize), |(h, s), (v, &c)| {
        if v.iter().all(|&k| k == 0) {
            (h, s)
        } else {
            let votes: Vec<f64> = v.iter().map(|&k| f64::from(k)).collect();
            (h + usize::from(argmax(&votes) == c), s + 1)
        }
    });
    Ok(Forest {
        n_classes,
        n_features: d,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy: (seen > 0).then(|| hits as f64 / seen as f64),
    })
}

impl Forest {
    /// Majority over trees, lowest class on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0.0; self.n_classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1.0;
        }
        argmax(&votes)
    }

    /// Majority over per-window predictions, lowest class on ties.
    pub fn classify_segment<'a>(&self, windows: impl IntoIterator<Item = &'a [f64]>) -> Result<usize> {
        let mut votes = vec![0.0; self.n_classes];
        let mut any = false;
        for w in windows {
            if w.len() != self.n_features {
                return Err(Error::Config(format!("window has {} features, forest expects {}", w.len(), self.n_features)));
            }
            votes[self.predict(w)] += 1.0;
            any = true;
        }
        if !any {
            return Err(Error::EmptyInput("segment has no windows".into()));
        }
        Ok(argmax(&votes))
    }
}

/// Window summary rows and class labels of a segment pool; `pool[c]` holds
/// the segments of class `c`.
pub fn pool_rows(pool: &[Vec<RawSegment>], w: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let per_class: Vec<Vec<[f64; N_SUMMARY]>> = pool
        .par_iter()
        .map(|segs| -> Result<Vec<[f64; N_SUMMARY]>> {
            let mut rows = Vec::new();
            for s in segs {
                rows.extend(summarize_segment(s, w)?);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (c, rows) in per_class.into_iter().enumerate() {
        y.extend(std::iter::repeat_n(c, rows.len()));
        x.extend(rows.into_iter().map(|r| r.to_vec()));
    }
    Ok((x, y))
}

/// Segment-level confusion of the forest on a test pool.
pub fn forest_confusion(forest: &Forest, test: &[Vec<RawSegment>], w: usize) -> Result<ConfusionMatrix> {
    let pairs: Vec<(usize, usize)> = test
        .iter()
        .enumerate()
        .flat_map(|(c, segs)| segs.iter().map(move |s| (c, s)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(c, s)| {
            let rows = summarize_segment(s, w)?;
            Ok((c, forest.classify_segment(rows.iter().map(|r| r.as_slice()))?))
        })
        .collect::<Result<_>>()?;
    ConfusionMatrix::from_pairs(forest.n_classes, pairs)
}

const MAGIC: &[u8; 4] = b"SFOR";
pub const FOREST_VERSION: u32 = 1;

fn put_u32(b: &mut Vec<u8>, v: usize) {
    b.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Little-endian: magic, version, n_classes, n_features, n_trees, OOB
/// accuracy (NaN when absent), then per tree its node count and nodes
/// (tag 0 split: feature u32, threshold f64, left u32, right u32; tag 1 leaf:
/// class counts u32).
pub fn save_forest(forest: &Forest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    put_u32(&mut b, FOREST_VERSION as usize);
    put_u32(&mut b, forest.n_classes);
    put_u32(&mut b, forest.n_features);
    put_u32(&mut b, forest.trees.len());
    b.extend_from_slice(&forest.oob_accuracy.unwrap_or(f64::NAN).to_le_bytes());
    for t in &forest.trees {
        put_u32(&mut b, t.nodes.len());
        for node in &t.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    b.push(0);
                    put_u32(&mut b, *feature);
                    b.extend_from_slice(&threshold.to_le_bytes());
                    put_u32(&mut b, *left);
                    put_u32(&mut b, *right);
                }
                Node::Leaf { hist } => {
                    b.push(1);
                    hist.iter().for_each(|&c| b.extend_from_slice(&c.to_le_bytes()));
                }
            }
        }
    }
    std::fs::write(path, b).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .b
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Format("truncated forest file".into()))?;
        self.pos += N;
        Ok(s.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<Forest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { b: &bytes, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(Error::Format("not a forest file".into()));
    }
    let version = r.u32()?;
    if version != FOREST_VERSION as usize {
        return Err(Error::Format(format!("forest version {version} not supported")));
    }
    let n_classes = r.u32()?;
    let n_features = r.u32()?;
    let n_trees = r.u32()?;
    let oob = f64::from_le_bytes(r.take()?);
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let n_nodes = r.u32()?;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for _ in 0..n_nodes {
            let [tag] = r.take::<1>()?;
            nodes.push(match tag {
                0 => {
                    let feature = r.u32()?;
                    let threshold = f64::from_le_bytes(r.take()?);
                    let (left, right) = (r.u32()?, r.u32()?);
                    if feature >= n_features || left >= n_nodes || right >= n_nodes {
                        return Err(Error::Format("forest node out of range".into()));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                1 => Node::Leaf {
                    hist: (0..n_classes)
                        .map(|_| r.take().map(u32::from_le_bytes))
                        .collect::<Result<_>>()?,
                },
                t => return Err(Error::Format(format!("unknown forest node tag {t}"))),
            });
        }
        trees.push(Tree { nodes });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after forest".into()));
    }
    Ok(Forest {
        n_classes,
        n_features,
        trees,
        oob_accuracy: (!oob.is_nan()).then_some(oob),
    })
}

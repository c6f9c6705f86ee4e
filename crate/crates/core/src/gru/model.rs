use rand::Rng;
use rayon::prelude::*;

use super::cell::SeqCache;
use super::{Gradients, ModelParams, VoteVector, Weights, L1_BWD, L1_FWD, L2_BWD, L2_FWD};
use crate::error::{Error, Result};
use crate::features::{Batch, SegmentMatrix, WINDOWS_PER_VOTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout masks on the output sequence of each layer, shared
/// across time. Entries are `0` or `1 / keep_prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub layer1: Vec<f64>,
    pub layer2: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, width: usize, keep_prob: f64) -> Self {
        let mut draw = || -> Vec<f64> {
            (0..width)
                .map(|_| if rng.random::<f64>() < keep_prob { 1.0 / keep_prob } else { 0.0 })
                .collect()
        };
        let layer1 = draw();
        let layer2 = draw();
        DropoutMasks { layer1, layer2 }
    }

    /// Masks for `mode`: none in eval mode or when nothing is dropped.
    pub fn for_mode<R: Rng + ?Sized>(rng: &mut R, params: &ModelParams, mode: Mode) -> Option<Self> {
        let keep = params.config.keep_prob;
        (mode == Mode::Train && keep < 1.0).then(|| Self::sample(rng, 2 * params.config.hidden, keep))
    }
}

struct Forward {
    x: Vec<f64>,
    l1: [SeqCache; 2],
    y1: Vec<f64>,
    l2: [SeqCache; 2],
    u: Vec<f64>,
    /// Logits of each vote.
    logits: Vec<Vec<f64>>,
}

fn check_input(params: &ModelParams, seg: &SegmentMatrix) -> Result<()> {
    let cfg = &params.config;
    if params.stats.is_none() {
        return Err(Error::Config("model has no feature standardisation statistics".into()));
    }
    if seg.dim != cfg.input_dim {
        return Err(Error::Config(format!(
            "segment feature dim {} does not match model input dim {}",
            seg.dim, cfg.input_dim
        )));
    }
    if seg.n_windows == 0 || seg.n_windows % WINDOWS_PER_VOTE != 0 {
        return Err(Error::Config(format!(
            "segment has {} windows, need a positive multiple of {WINDOWS_PER_VOTE}",
            seg.n_windows
        )));
    }
    Ok(())
}

/// `[fwd_t, bwd_t] * mask` for every position.
fn concat_masked(fwd: &SeqCache, bwd: &SeqCache, mask: Option<&[f64]>) -> Vec<f64> {
    let n = fwd.hidden;
    let mut out = Vec::with_capacity(fwd.len * 2 * n);
    for t in 0..fwd.len {
        out.extend_from_slice(fwd.h_at(t));
        out.extend_from_slice(bwd.h_at(t));
    }
    if let Some(m) = mask {
        for row in out.chunks_exact_mut(2 * n) {
            row.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
    }
    out
}

fn forward(params: &ModelParams, seg: &SegmentMatrix, masks: Option<&DropoutMasks>) -> Result<Forward> {
    check_input(params, seg)?;
    let cfg = &params.config;
    let act = cfg.activation;
    let stats = params.stats.as_ref().expect("checked above");
    let f = seg.n_windows;
    let n = cfg.hidden;
    let w = &params.weights;

    let mut x = vec![0.0; seg.data.len()];
    for (row, out) in seg.rows().zip(x.chunks_exact_mut(seg.dim)) {
        stats.apply(row, out);
    }
    let l1 = [
        w.cells[L1_FWD].forward_seq(act, &x, f, false)?,
        w.cells[L1_BWD].forward_seq(act, &x, f, true)?,
    ];
    let y1 = concat_masked(&l1[0], &l1[1], masks.map(|m| m.layer1.as_slice()));
    let l2 = [
        w.cells[L2_FWD].forward_seq(act, &y1, f, false)?,
        w.cells[L2_BWD].forward_seq(act, &y1, f, true)?,
    ];
    let u = concat_masked(&l2[0], &l2[1], masks.map(|m| m.layer2.as_slice()));

    let logits = (1..=f / WINDOWS_PER_VOTE)
        .map(|k| {
            let t = k * WINDOWS_PER_VOTE - 1;
            let mut z = w.head_b.clone();
            w.head_w.matvec_acc(&u[t * 2 * n..(t + 1) * 2 * n], &mut z);
            z
        })
        .collect();
    Ok(Forward { x, l1, y1, l2, u, logits })
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

/// Vote vectors of one segment. Train mode draws dropout masks from `rng`;
/// eval mode is deterministic.
pub fn encode_segment<R: Rng + ?Sized>(
    params: &ModelParams,
    seg: &SegmentMatrix,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<VoteVector>> {
    let masks = DropoutMasks::for_mode(rng, params, mode);
    Ok(forward(params, seg, masks.as_ref())?
        .logits
        .iter()
        .map(|z| VoteVector(softmax(z)))
        .collect())
}

fn check_label(label: usize, n_classes: usize) -> Result<()> {
    if label >= n_classes {
        return Err(Error::Label { label, n_classes });
    }
    Ok(())
}

/// Mean cross-entropy of the votes against `label` plus the L2 penalty.
pub fn loss(votes: &[VoteVector], label: usize, params: &ModelParams) -> Result<f64> {
    if votes.is_empty() {
        return Err(Error::EmptyInput("no votes to score".into()));
    }
    check_label(label, params.config.n_classes)?;
    let ce = votes.iter().map(|v| -v.0[label].ln()).sum::<f64>() / votes.len() as f64;
    Ok(ce + params.config.l2_lambda * params.weights.l2_norm_sq())
}

/// Loss of a single segment computed from logits, with fixed dropout masks.
pub fn segment_loss(
    params: &ModelParams,
    seg: &SegmentMatrix,
    label: usize,
    masks: Option<&DropoutMasks>,
) -> Result<f64> {
    check_label(label, params.config.n_classes)?;
    let fw = forward(params, seg, masks)?;
    let ce = fw.logits.iter().map(|z| -log_softmax(z)[label]).sum::<f64>() / fw.logits.len() as f64;
    Ok(ce + params.config.l2_lambda * params.weights.l2_norm_sq())
}

/// Adds `scale * d(CE)/d(theta)` of one segment to `grad`; returns the
/// segment's mean cross-entropy.
fn accumulate_example(
    params: &ModelParams,
    seg: &SegmentMatrix,
    label: usize,
    scale: f64,
    masks: Option<&DropoutMasks>,
    grad: &mut Weights,
) -> Result<f64> {
    check_label(label, params.config.n_classes)?;
    let fw = forward(params, seg, masks)?;
    let cfg = &params.config;
    let act = cfg.activation;
    let w = &params.weights;
    let n = cfg.hidden;
    let f = seg.n_windows;
    let votes = fw.logits.len();

    let mut ce = 0.0;
    let mut du = vec![0.0; f * 2 * n];
    for (k, z) in fw.logits.iter().enumerate() {
        let t = (k + 1) * WINDOWS_PER_VOTE - 1;
        let lp = log_softmax(z);
        ce -= lp[label];
        let dz: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(c, l)| (l.exp() - f64::from(c == label)) * scale / votes as f64)
            .collect();
        let ut = &fw.u[t * 2 * n..(t + 1) * 2 * n];
        grad.head_w.outer_acc(&dz, ut);
        grad.head_b.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
        w.head_w.matvec_t_acc(&dz, &mut du[t * 2 * n..(t + 1) * 2 * n]);
    }

    let split = |d: &[f64], mask: Option<&[f64]>| -> (Vec<f64>, Vec<f64>) {
        let mut fwd = Vec::with_capacity(f * n);
        let mut bwd = Vec::with_capacity(f * n);
        for row in d.chunks_exact(2 * n) {
            match mask {
                Some(m) => {
                    fwd.extend(row[..n].iter().zip(&m[..n]).map(|(a, b)| a * b));
                    bwd.extend(row[n..].iter().zip(&m[n..]).map(|(a, b)| a * b));
                }
                None => {
                    fwd.extend_from_slice(&row[..n]);
                    bwd.extend_from_slice(&row[n..]);
                }
            }
        }
        (fwd, bwd)
    };

    let (dh2f, dh2b) = split(&du, masks.map(|m| m.layer2.as_slice()));
    let mut dy1 = vec![0.0; f * 2 * n];
    let [g0, g1, g2, g3] = &mut grad.cells;
    w.cells[L2_FWD].backward_seq(act, &fw.l2[0], &fw.y1, &dh2f, g2, &mut dy1);
    w.cells[L2_BWD].backward_seq(act, &fw.l2[1], &fw.y1, &dh2b, g3, &mut dy1);

    let (dh1f, dh1b) = split(&dy1, masks.map(|m| m.layer1.as_slice()));
    let mut dx = vec![0.0; fw.x.len()];
    w.cells[L1_FWD].backward_seq(act, &fw.l1[0], &fw.x, &dh1f, g0, &mut dx);
    w.cells[L1_BWD].backward_seq(act, &fw.l1[1], &fw.x, &dh1b, g1, &mut dx);

    Ok(ce / votes as f64)
}

/// Fixed number of partial sums so the reduction order does not depend on
/// the thread count.
const REDUCE_CHUNKS: usize = 4;

/// Gradient of `sum_i weight_i * CE_i / sum_i weight_i + lambda * |W|^2`.
///
/// Returns the loss and its gradient. Partial sums over examples are
/// combined in a fixed order, so results are identical for any thread pool.
pub fn backward_weighted(
    params: &ModelParams,
    examples: &[(&SegmentMatrix, usize, f64, Option<DropoutMasks>)],
    step: usize,
) -> Result<(f64, Gradients)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let total: f64 = examples.iter().map(|e| e.2).sum();
    if !(total > 0.0) {
        return Err(Error::Config("example weights must sum to a positive value".into()));
    }
    let chunk = examples.len().div_ceil(REDUCE_CHUNKS);
    let partials: Vec<Result<(f64, Weights)>> = examples
        .par_chunks(chunk)
        .map(|part| {
            let mut g = params.weights.zeros_like();
            let mut ce = 0.0;
            for (seg, label, weight, masks) in part {
                let s = weight / total;
                ce += s * accumulate_example(params, seg, *label, s, masks.as_ref(), &mut g)?;
            }
            Ok((ce, g))
        })
        .collect();
    let mut grad = params.weights.zeros_like();
    let mut ce = 0.0;
    for p in partials {
        let (c, g) = p?;
        ce += c;
        grad.add_scaled(&g, 1.0);
    }
    let lambda = params.config.l2_lambda;
    let loss = ce + lambda * params.weights.l2_norm_sq();
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Divergence { step });
    }
    if lambda > 0.0 {
        for ((g, decay), (p, _)) in grad.tensors_mut().into_iter().zip(params.weights.tensors()) {
            if decay {
                super::tensor::axpy(2.0 * lambda, p, g);
            }
        }
    }
    Ok((loss, grad))
}

/// Batch-mean loss and its exact gradient by backpropagation through time.
/// Dropout masks are drawn from `rng` per example, in batch order.
pub fn backward<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &Batch<'_>,
    rng: &mut R,
    step: usize,
) -> Result<(f64, Gradients)> {
    let examples: Vec<_> = batch
        .segments
        .iter()
        .zip(&batch.labels)
        .map(|(seg, &label)| (*seg, label, 1.0, DropoutMasks::for_mode(rng, params, Mode::Train)))
        .collect();
    backward_weighted(params, &examples, step)
}

/// Largest discrepancy between [`backward_weighted`] and central finite
/// differences of the same objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub n_checked: usize,
    pub max_abs_error: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
}

/// Checks every parameter of `params` with step `eps`. Relative errors use
/// `floor` as the smallest denominator so components that are zero up to
/// rounding do not dominate.
pub fn gradient_check(
    params: &ModelParams,
    examples: &[(&SegmentMatrix, usize, f64, Option<DropoutMasks>)],
    eps: f64,
    floor: f64,
) -> Result<GradCheck> {
    let (_, analytic) = backward_weighted(params, examples, 0)?;
    let total: f64 = examples.iter().map(|e| e.2).sum();
    let objective = |p: &ModelParams| -> Result<f64> {
        examples
            .iter()
            .map(|(seg, label, w, masks)| Ok(w / total * segment_loss(p, seg, *label, masks.as_ref())?))
            .sum()
    };
    let mut probe = params.clone();
    let mut out = GradCheck {
        n_checked: 0,
        max_abs_error: 0.0,
        max_rel_error: 0.0,
    };
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|(t, _)| t.to_vec()).collect();
    for (ti, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = probe.weights.tensors()[ti].0[k];
            probe.weights.tensors_mut()[ti].0[k] = orig + eps;
            let up = objective(&probe)?;
            probe.weights.tensors_mut()[ti].0[k] = orig - eps;
            let down = objective(&probe)?;
            probe.weights.tensors_mut()[ti].0[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let abs = (a - numeric).abs();
            out.max_abs_error = out.max_abs_error.max(abs);
            out.max_rel_error = out.max_rel_error.max(abs / a.abs().max(numeric.abs()).max(floor));
            out.n_checked += 1;
        }
    }
    Ok(out)
}

//! Training loop: class-balanced batches, RMSProp, periodic evaluation on a
//! monitor pool and early stopping when its accuracy stops improving.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::cumulative_decision;
use crate::features::{assemble_batch, pool_shape, FeatureStats, SegmentMatrix, BATCH_SIZE};
use crate::gru::{backward, encode_segment, init_params, rmsprop_step, segment_loss, Mode, ModelConfig, ModelParams, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    /// Steps between monitor evaluations.
    pub eval_every: usize,
    /// Monitor evaluations without improvement before stopping.
    pub patience: usize,
    /// Segments per class taken from the training pool as the monitor when
    /// no validation pool is given.
    pub monitor_per_class: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 2000,
            batch_size: BATCH_SIZE,
            eval_every: 25,
            patience: 20,
            monitor_per_class: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorPoint {
    pub step: usize,
    /// Mean batch loss since the previous monitor point.
    pub train_loss: f64,
    pub monitor_accuracy: f64,
    pub monitor_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best monitor point.
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub steps_run: usize,
    pub best_step: usize,
    pub stopped_early: bool,
    pub history: Vec<MonitorPoint>,
    /// Batch loss of every step.
    pub losses: Vec<f64>,
}

fn monitor_pool<'a>(train: &'a [Vec<SegmentMatrix>], val: Option<&'a [Vec<SegmentMatrix>]>, per_class: usize) -> Vec<&'a SegmentMatrix> {
    match val {
        Some(v) => v.iter().flatten().collect(),
        None => train.iter().flat_map(|c| c.iter().take(per_class.max(1))).collect(),
    }
}

/// Final-vote accuracy and mean loss (without the penalty) on `pool`.
pub fn monitor(params: &ModelParams, pool: &[&SegmentMatrix]) -> Result<(f64, f64)> {
    let mut plain = params.clone();
    plain.config.l2_lambda = 0.0;
    let scored: Vec<Result<(bool, f64)>> = pool
        .par_iter()
        .map(|seg| {
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let votes = encode_segment(params, seg, Mode::Eval, &mut unused)?;
            let hit = cumulative_decision(&votes)? == seg.label;
            let ce = segment_loss(&plain, seg, seg.label, None)?;
            Ok((hit, ce))
        })
        .collect();
    let mut hits = 0usize;
    let mut loss = 0.0;
    for s in scored {
        let (h, l) = s?;
        hits += usize::from(h);
        loss += l;
    }
    let n = pool.len().max(1) as f64;
    Ok((hits as f64 / n, loss / n))
}

/// Trains from scratch. `train[c]` holds the segments of class `c`; every
/// matrix must carry `label == c`. Feature statistics are fitted on the
/// training pool and frozen into the returned parameters.
pub fn train(
    train: &[Vec<SegmentMatrix>],
    val: Option<&[Vec<SegmentMatrix>]>,
    model: ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (_, dim) = pool_shape(train)?;
    if model.n_classes != train.len() || model.input_dim != dim {
        return Err(Error::Config(format!(
            "model expects {} classes of dim {}, pool has {} classes of dim {dim}",
            model.n_classes,
            model.input_dim,
            train.len()
        )));
    }
    for (c, class) in train.iter().enumerate() {
        if class.iter().any(|m| m.label != c) {
            return Err(Error::Config(format!("pool entry {c} holds segments of another class")));
        }
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("batch size and evaluation interval must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(&mut rng, model)?;
    params.stats = Some(FeatureStats::fit(train.iter().flatten())?);
    let mut opt = OptimizerState::new(&params.weights);
    let lr = params.config.learning_rate;
    let pool = monitor_pool(train, val, cfg.monitor_per_class);

    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_params = params.clone();
    let mut best_opt = opt.clone();
    let mut best_step = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut losses = Vec::with_capacity(cfg.max_steps);
    let mut stopped_early = false;

    for step in 1..=cfg.max_steps {
        let batch = assemble_batch(train, cfg.batch_size, &mut rng)?;
        let (loss, grad) = backward(&params, &batch, &mut rng, step)?;
        rmsprop_step(&mut opt, &mut params.weights, &grad, lr)?;
        if !params.weights.is_finite() {
            return Err(Error::Divergence { step });
        }
        losses.push(loss);

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let (acc, mloss) = monitor(&params, &pool)?;
            let since = losses.len() - history.last().map_or(0, |p: &MonitorPoint| p.step);
            let train_loss = losses[losses.len() - since..].iter().sum::<f64>() / since as f64;
            log::debug!("step {step}: loss {train_loss:.4}, monitor acc {acc:.3}, monitor loss {mloss:.4}");
            history.push(MonitorPoint {
                step,
                train_loss,
                monitor_accuracy: acc,
                monitor_loss: mloss,
            });
            if acc > best.0 || (acc == best.0 && mloss < best.1) {
                best = (acc, mloss);
                best_params = params.clone();
                best_opt = opt.clone();
                best_step = step;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    log::info!("early stop at step {step}, best step {best_step}");
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        optimizer: best_opt,
        steps_run: losses.len(),
        best_step,
        stopped_early,
        history,
        losses,
    })
}

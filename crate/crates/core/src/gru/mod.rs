//! Two-layer bidirectional GRU encoder with a softmax vote head.
//!
//! Every sixth window the forward and backward hidden states of the top layer
//! are concatenated and mapped to class probabilities (a vote). Training
//! minimises the mean cross-entropy of the votes plus an L2 penalty on all
//! weight matrices.

mod cell;
mod checkpoint;
mod model;
mod optim;
mod tensor;

pub use cell::{sigmoid, Activation, GruCell, SeqCache};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use model::{
    backward, backward_weighted, encode_segment, gradient_check, loss, segment_loss, DropoutMasks, GradCheck, Mode,
};
pub use optim::{rmsprop_step, OptimizerState, RMS_DECAY, RMS_EPSILON};
pub use tensor::{glorot_bound, Matrix};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub keep_prob: f64,
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub activation: Activation,
}

impl ModelConfig {
    /// Hidden size 512, keep probability 0.7, L2 1e-3, learning rate 1e-4,
    /// sigmoid candidate activation.
    pub fn new(n_classes: usize, input_dim: usize) -> Self {
        ModelConfig {
            n_classes,
            input_dim,
            hidden: 512,
            keep_prob: 0.7,
            l2_lambda: 1e-3,
            learning_rate: 1e-4,
            activation: Activation::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep_prob {} outside (0, 1]", self.keep_prob)));
        }
        if self.hidden == 0 || self.input_dim == 0 {
            return Err(Error::Config("hidden and input sizes must be positive".into()));
        }
        if !(self.l2_lambda >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("l2_lambda must be >= 0 and learning_rate > 0".into()));
        }
        Ok(())
    }
}

/// All learnable tensors. Also used for gradients and optimizer
/// accumulators, which share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// Layer 1 forward, layer 1 backward, layer 2 forward, layer 2 backward.
    pub cells: [GruCell; 4],
    /// `n_classes x 2 * hidden`.
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

pub type Gradients = Weights;

pub const L1_FWD: usize = 0;
pub const L1_BWD: usize = 1;
pub const L2_FWD: usize = 2;
pub const L2_BWD: usize = 3;

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        Weights {
            cells: [
                GruCell::zeros(h, config.input_dim),
                GruCell::zeros(h, config.input_dim),
                GruCell::zeros(h, 2 * h),
                GruCell::zeros(h, 2 * h),
            ],
            head_w: Matrix::zeros(config.n_classes, 2 * h),
            head_b: vec![0.0; config.n_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Weights {
            cells: self.cells.clone().map(|c| GruCell::zeros(c.hidden(), c.input_dim())),
            head_w: self.head_w.zeros_like(),
            head_b: vec![0.0; self.head_b.len()],
        }
    }

    /// Tensors in checkpoint order, each flagged with whether it carries L2
    /// decay.
    pub fn tensors(&self) -> Vec<(&[f64], bool)> {
        let mut out: Vec<(&[f64], bool)> = Vec::with_capacity(26);
        for cell in &self.cells {
            out.extend(cell.matrices().map(|m| (m.data.as_slice(), true)));
        }
        out.push((&self.head_w.data, true));
        out.push((&self.head_b, false));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out: Vec<(&mut [f64], bool)> = Vec::with_capacity(26);
        for cell in &mut self.cells {
            out.extend(cell.matrices_mut().map(|m| (m.data.as_mut_slice(), true)));
        }
        out.push((&mut self.head_w.data, true));
        out.push((&mut self.head_b, false));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    /// `sum` of squared entries of every decayed tensor.
    pub fn l2_norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .filter(|(_, decay)| *decay)
            .map(|(t, _)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for ((a, _), (b, _)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            tensor::axpy(scale, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (t, _) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }
}

/// Model weights together with hyperparameters and the frozen feature
/// standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub stats: Option<FeatureStats>,
}

impl ModelParams {
    pub fn ensure_compatible(&self, n_classes: usize, input_dim: usize) -> Result<()> {
        if self.config.n_classes != n_classes || self.config.input_dim != input_dim {
            return Err(Error::Config(format!(
                "model expects {} classes and input dim {}, data has {} and {}",
                self.config.n_classes, self.config.input_dim, n_classes, input_dim
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform matrices, zero head bias, no feature statistics yet.
pub fn init_params<R: Rng + ?Sized>(rng: &mut R, config: ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let h = config.hidden;
    let d = config.input_dim;
    let weights = Weights {
        cells: [
            GruCell::glorot(h, d, rng),
            GruCell::glorot(h, d, rng),
            GruCell::glorot(h, 2 * h, rng),
            GruCell::glorot(h, 2 * h, rng),
        ],
        head_w: Matrix::glorot(config.n_classes, 2 * h, rng),
        head_b: vec![0.0; config.n_classes],
    };
    Ok(ModelParams {
        config,
        weights,
        stats: None,
    })
}

/// Class probabilities emitted after a block of six windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteVector(pub Vec<f64>);

impl VoteVector {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "SGRU" | version u32 | n_classes u32 | hidden u32 | input_dim u32
//! activation u8 | has_stats u8 | reserved u16
//! keep_prob f64 | l2_lambda f64 | learning_rate f64
//! rms_decay f64 | rms_epsilon f64 | step u64
//! [feature mean f64 x input_dim | feature scale f64 x input_dim]
//! parameter tensors f64, then optimizer accumulators f64
//! FNV-1a 64 checksum of everything above
//! ```
//!
//! Tensor order is layer 1 forward, layer 1 backward, layer 2 forward,
//! layer 2 backward (each `w_z, w_r, w_h, u_z, u_r, u_h`), then the vote
//! head weight and bias. A JSON sidecar next to the file repeats the
//! hyperparameters and feature statistics.

use std::path::Path;

use serde::Serialize;

use super::{Activation, ModelConfig, ModelParams, OptimizerState, Weights};
use crate::error::{Error, Result};
use crate::features::FeatureStats;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SGRU";

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    version: u32,
    config: &'a ModelConfig,
    feature_stats: Option<&'a FeatureStats>,
    optimizer: SidecarOptimizer,
    tensor_order: Vec<String>,
    n_params: usize,
}

#[derive(Serialize)]
struct SidecarOptimizer {
    decay: f64,
    epsilon: f64,
    step: u64,
}

fn tensor_names() -> Vec<String> {
    let mut names = Vec::new();
    for cell in ["l1_fwd", "l1_bwd", "l2_fwd", "l2_bwd"] {
        for m in ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h"] {
            names.push(format!("{cell}.{m}"));
        }
    }
    names.push("head.w".into());
    names.push("head.b".into());
    names
}

fn encode(params: &ModelParams, state: &OptimizerState) -> Vec<u8> {
    let cfg = &params.config;
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    for v in [CHECKPOINT_VERSION, cfg.n_classes as u32, cfg.hidden as u32, cfg.input_dim as u32] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.push(cfg.activation.code());
    b.push(u8::from(params.stats.is_some()));
    b.extend_from_slice(&0u16.to_le_bytes());
    for v in [cfg.keep_prob, cfg.l2_lambda, cfg.learning_rate, state.decay, state.epsilon] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&state.step.to_le_bytes());
    if let Some(s) = &params.stats {
        for v in s.mean.iter().chain(&s.scale) {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    for (t, _) in params.weights.tensors().into_iter().chain(state.acc.tensors()) {
        for v in t {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&b);
    b.extend_from_slice(&sum.to_le_bytes());
    b
}

pub fn save_checkpoint(params: &ModelParams, state: &OptimizerState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(params, state)).map_err(|e| Error::io(path, e))?;
    let sidecar = Sidecar {
        version: CHECKPOINT_VERSION,
        config: &params.config,
        feature_stats: params.stats.as_ref(),
        optimizer: SidecarOptimizer {
            decay: state.decay,
            epsilon: state.epsilon,
            step: state.step,
        },
        tensor_order: tensor_names(),
        n_params: params.weights.n_params(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let side = path.with_extension("json");
    std::fs::write(&side, json).map_err(|e| Error::io(side, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fill(&mut self, out: &mut [f64]) -> Result<()> {
        let raw = self.take(out.len() * 8)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *o = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]. Nothing is returned
/// unless the whole file validates.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, OptimizerState)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<(ModelParams, OptimizerState)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {version} not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let n_classes = c.u32()? as usize;
    let hidden = c.u32()? as usize;
    let input_dim = c.u32()? as usize;
    let flags = c.take(4)?;
    let activation = Activation::from_code(flags[0])
        .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {}", flags[0])))?;
    let has_stats = flags[1] == 1;
    let config = ModelConfig {
        n_classes,
        input_dim,
        hidden,
        keep_prob: c.f64()?,
        l2_lambda: c.f64()?,
        learning_rate: c.f64()?,
        activation,
    };
    let decay = c.f64()?;
    let epsilon = c.f64()?;
    let step = c.u64()?;

    // Size check before allocating anything shape-dependent.
    let weights_len = {
        let cells = 2 * (3 * hidden * input_dim + 3 * hidden * hidden) + 2 * (3 * hidden * 2 * hidden + 3 * hidden * hidden);
        cells + n_classes * 2 * hidden + n_classes
    };
    let stats_len = if has_stats { 2 * input_dim } else { 0 };
    let expected = c.pos + 8 * (stats_len + 2 * weights_len);
    if body.len() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint body is {} bytes, header implies {expected}",
            body.len()
        )));
    }
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;

    let stats = if has_stats {
        let mut mean = vec![0.0; input_dim];
        let mut scale = vec![0.0; input_dim];
        c.fill(&mut mean)?;
        c.fill(&mut scale)?;
        Some(FeatureStats { mean, scale })
    } else {
        None
    };
    let mut weights = Weights::zeros(&config);
    for (t, _) in weights.tensors_mut() {
        c.fill(t)?;
    }
    let mut acc = Weights::zeros(&config);
    for (t, _) in acc.tensors_mut() {
        c.fill(t)?;
    }
    Ok((
        ModelParams {
            config,
            weights,
            stats,
        },
        OptimizerState {
            acc,
            decay,
            epsilon,
            step,
        },
    ))
}

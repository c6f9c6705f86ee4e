use super::{Gradients, Weights};
use crate::error::{Error, Result};

pub const RMS_DECAY: f64 = 0.9;
pub const RMS_EPSILON: f64 = 1e-10;

/// Running mean of squared gradients, one accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub acc: Weights,
    pub decay: f64,
    pub epsilon: f64,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Weights) -> Self {
        OptimizerState {
            acc: params.zeros_like(),
            decay: RMS_DECAY,
            epsilon: RMS_EPSILON,
            step: 0,
        }
    }
}

/// `acc <- decay * acc + (1 - decay) * g^2`,
/// `theta <- theta - lr * g / sqrt(acc + eps)`.
pub fn rmsprop_step(state: &mut OptimizerState, params: &mut Weights, grads: &Gradients, lr: f64) -> Result<()> {
    let (decay, eps) = (state.decay, state.epsilon);
    let mut acc = state.acc.tensors_mut();
    let mut theta = params.tensors_mut();
    let grads = grads.tensors();
    if acc.len() != theta.len() || grads.len() != theta.len() {
        return Err(Error::Wiring("optimizer state does not match parameters".into()));
    }
    for ((a, p), g) in acc.iter_mut().zip(theta.iter_mut()).zip(&grads) {
        if a.0.len() != p.0.len() || g.0.len() != p.0.len() {
            return Err(Error::Wiring("optimizer tensor shapes disagree".into()));
        }
        for ((ai, pi), gi) in a.0.iter_mut().zip(p.0.iter_mut()).zip(g.0.iter()) {
            *ai = decay * *ai + (1.0 - decay) * gi * gi;
            *pi -= lr * gi / (*ai + eps).sqrt();
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::{init_params, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> Weights {
        let cfg = ModelConfig {
            hidden: 3,
            ..ModelConfig::new(2, 2)
        };
        init_params(&mut ChaCha8Rng::seed_from_u64(0), cfg).unwrap().weights
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = params();
        let before = p.clone();
        let mut st = OptimizerState::new(&p);
        let g = p.zeros_like();
        rmsprop_step(&mut st, &mut p, &g, 1e-4).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn scalar_update_by_hand() {
        let mut p = params();
        p.head_b[0] = 1.0;
        let mut g = p.zeros_like();
        g.head_b[0] = 1.0;
        let mut st = OptimizerState::new(&p);
        rmsprop_step(&mut st, &mut p, &g, 1e-4).unwrap();
        assert!((st.acc.head_b[0] - 0.1).abs() < 1e-15);
        let expected = 1.0 - 1e-4 / (0.1f64 + 1e-10).sqrt();
        assert_eq!(p.head_b[0], expected);
        assert!((p.head_b[0] - (1.0 - 3.1623e-4)).abs() < 1e-8);
    }

    #[test]
    fn descends_on_a_parabola() {
        let mut p = params();
        p.head_b[0] = 1.0;
        let mut st = OptimizerState::new(&p);
        let mut prev = 1.0f64;
        for _ in 0..100 {
            let mut g = p.zeros_like();
            g.head_b[0] = 2.0 * p.head_b[0];
            rmsprop_step(&mut st, &mut p, &g, 1e-4).unwrap();
            assert!(p.head_b[0].abs() < prev.abs());
            prev = p.head_b[0];
        }
        assert!(st.acc.tensors().iter().all(|(t, _)| t.iter().all(|&a| a >= 0.0)));
    }
}

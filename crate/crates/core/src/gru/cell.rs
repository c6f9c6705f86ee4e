use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::error::{Error, Result};

/// Activation of the candidate state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(a),
            Activation::Tanh => a.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown candidate activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        })
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Weights of one GRU cell. No biases:
///
/// ```text
/// z = sigmoid(W_z x + U_z h)
/// r = sigmoid(W_r x + U_r h)
/// h' = z * h + (1 - z) * g(W x + U (r * h))
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
}

/// Activations recorded over one directional pass, indexed by sequence
/// position (not processing order).
#[derive(Debug, Clone)]
pub struct SeqCache {
    pub hidden: usize,
    pub len: usize,
    pub reverse: bool,
    /// Hidden state after consuming position `t`.
    pub h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

impl SeqCache {
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }
}

impl GruCell {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruCell {
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        GruCell {
            w_z: Matrix::glorot(hidden, input, rng),
            w_r: Matrix::glorot(hidden, input, rng),
            w_h: Matrix::glorot(hidden, input, rng),
            u_z: Matrix::glorot(hidden, hidden, rng),
            u_r: Matrix::glorot(hidden, hidden, rng),
            u_h: Matrix::glorot(hidden, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_z.rows
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    /// Fixed order: `w_z, w_r, w_h, u_z, u_r, u_h`.
    pub fn matrices(&self) -> [&Matrix; 6] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
        ]
    }

    fn check(&self, x: &[f64], h_prev: &[f64]) -> Result<()> {
        let h = self.hidden();
        let consistent = self.w_r.rows == h
            && self.w_h.rows == h
            && self.w_r.cols == self.input_dim()
            && self.w_h.cols == self.input_dim()
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|m| m.rows == h && m.cols == h);
        if !consistent || x.len() != self.input_dim() || h_prev.len() != h {
            return Err(Error::Wiring(format!(
                "GRU cell {}x{} given input {} and state {}",
                h,
                self.input_dim(),
                x.len(),
                h_prev.len()
            )));
        }
        Ok(())
    }

    /// Gate activations of a single step written into `z`, `r`, `c`, `h_new`.
    #[inline]
    fn step_into(
        &self,
        act: Activation,
        x: &[f64],
        h_prev: &[f64],
        z: &mut [f64],
        r: &mut [f64],
        c: &mut [f64],
        h_new: &mut [f64],
        rh: &mut [f64],
    ) {
        z.fill(0.0);
        r.fill(0.0);
        c.fill(0.0);
        self.w_z.matvec_acc(x, z);
        self.u_z.matvec_acc(h_prev, z);
        self.w_r.matvec_acc(x, r);
        self.u_r.matvec_acc(h_prev, r);
        for j in 0..z.len() {
            z[j] = sigmoid(z[j]);
            r[j] = sigmoid(r[j]);
            rh[j] = r[j] * h_prev[j];
        }
        self.w_h.matvec_acc(x, c);
        self.u_h.matvec_acc(rh, c);
        for j in 0..c.len() {
            c[j] = act.apply(c[j]);
            h_new[j] = z[j] * h_prev[j] + (1.0 - z[j]) * c[j];
        }
    }

    pub fn step(&self, act: Activation, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        self.check(x, h_prev)?;
        let n = self.hidden();
        let (mut z, mut r, mut c, mut h, mut rh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        self.step_into(act, x, h_prev, &mut z, &mut r, &mut c, &mut h, &mut rh);
        Ok(h)
    }

    /// Runs the cell over `len` inputs stored row-major in `xs`, left to right
    /// or right to left, starting from a zero state.
    pub fn forward_seq(&self, act: Activation, xs: &[f64], len: usize, reverse: bool) -> Result<SeqCache> {
        let n = self.hidden();
        let d = self.input_dim();
        if xs.len() != len * d {
            return Err(Error::Wiring(format!(
                "sequence of {} values is not {len} x {d}",
                xs.len()
            )));
        }
        let zero = vec![0.0; n];
        if len > 0 {
            self.check(&xs[..d], &zero)?;
        }
        let mut cache = SeqCache {
            hidden: n,
            len,
            reverse,
            h: vec![0.0; len * n],
            z: vec![0.0; len * n],
            r: vec![0.0; len * n],
            c: vec![0.0; len * n],
        };
        let mut rh = vec![0.0; n];
        let mut h_prev = zero;
        for step in 0..len {
            let t = if reverse { len - 1 - step } else { step };
            let s = t * n..(t + 1) * n;
            let mut h_new = vec![0.0; n];
            self.step_into(
                act,
                &xs[t * d..(t + 1) * d],
                &h_prev,
                &mut cache.z[s.clone()],
                &mut cache.r[s.clone()],
                &mut cache.c[s.clone()],
                &mut h_new,
                &mut rh,
            );
            cache.h[s].copy_from_slice(&h_new);
            h_prev = h_new;
        }
        Ok(cache)
    }

    /// Backpropagation through time for one directional pass.
    ///
    /// `dh_out` holds the loss gradient with respect to the hidden state at
    /// each position. Weight gradients are added to `grad`, input gradients
    /// to `dx`.
    pub fn backward_seq(
        &self,
        act: Activation,
        cache: &SeqCache,
        xs: &[f64],
        dh_out: &[f64],
        grad: &mut GruCell,
        dx: &mut [f64],
    ) {
        let n = self.hidden();
        let d = self.input_dim();
        let len = cache.len;
        let zero = vec![0.0; n];
        let mut carry = vec![0.0; n];
        let (mut dh, mut dac, mut daz, mut dar, mut drh, mut rh) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for step in (0..len).rev() {
            let t = if cache.reverse { len - 1 - step } else { step };
            let h_prev: &[f64] = if step == 0 {
                &zero
            } else {
                let p = if cache.reverse { t + 1 } else { t - 1 };
                cache.h_at(p)
            };
            let s = t * n..(t + 1) * n;
            let (z, r, c) = (&cache.z[s.clone()], &cache.r[s.clone()], &cache.c[s]);
            let x = &xs[t * d..(t + 1) * d];

            for j in 0..n {
                dh[j] = dh_out[t * n + j] + carry[j];
                let dc = dh[j] * (1.0 - z[j]);
                dac[j] = dc * act.grad_from_output(c[j]);
                rh[j] = r[j] * h_prev[j];
                carry[j] = dh[j] * z[j];
            }
            drh.fill(0.0);
            self.u_h.matvec_t_acc(&dac, &mut drh);
            for j in 0..n {
                let dz = dh[j] * (h_prev[j] - c[j]);
                daz[j] = dz * z[j] * (1.0 - z[j]);
                let dr = drh[j] * h_prev[j];
                dar[j] = dr * r[j] * (1.0 - r[j]);
                carry[j] += drh[j] * r[j];
            }
            self.u_z.matvec_t_acc(&daz, &mut carry);
            self.u_r.matvec_t_acc(&dar, &mut carry);

            grad.w_h.outer_acc(&dac, x);
            grad.u_h.outer_acc(&dac, &rh);
            grad.w_z.outer_acc(&daz, x);
            grad.u_z.outer_acc(&daz, h_prev);
            grad.w_r.outer_acc(&dar, x);
            grad.u_r.outer_acc(&dar, h_prev);

            let dxt = &mut dx[t * d..(t + 1) * d];
            self.w_z.matvec_t_acc(&daz, dxt);
            self.w_r.matvec_t_acc(&dar, dxt);
            self.w_h.matvec_t_acc(&dac, dxt);
        }
    }
}

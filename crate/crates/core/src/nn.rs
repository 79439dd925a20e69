//! Layers built from tape operations: dense, 4-layer skip MLP and GRU.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::params::{fan_in_uniform, Bound, ModelParams, ParamId};
use crate::{Result, Tape, Tensor, Var};

/// `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let w = params.add(&format!("{name}.w"), fan_in_uniform(rng, &[in_dim, out_dim], in_dim))?;
        let b = params.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add_bias(y, p.var(self.b))
    }
}

/// Four dense layers, ReLU hidden activations with identity bypasses on the
/// equal-width hidden layers, linear output:
///
/// ```text
/// h1 = relu(L1 x)
/// h2 = h1 + relu(L2 h1)
/// h3 = h2 + relu(L3 h2)
/// y  = L4 h3
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipMlp {
    pub layers: [Linear; 4],
}

impl SkipMlp {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let dims = [(in_dim, hidden), (hidden, hidden), (hidden, hidden), (hidden, out_dim)];
        let mut layers = Vec::with_capacity(4);
        for (k, (i, o)) in dims.into_iter().enumerate() {
            layers.push(Linear::new(params, rng, &format!("{name}.{k}"), i, o)?);
        }
        Ok(Self {
            layers: [layers[0], layers[1], layers[2], layers[3]],
        })
    }

    /// Output of the third hidden layer.
    pub fn hidden(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let l1 = self.layers[0].forward(tape, p, x)?;
        let mut h = tape.relu(l1)?;
        for layer in &self.layers[1..3] {
            let l = layer.forward(tape, p, h)?;
            let a = tape.relu(l)?;
            h = tape.add(h, a)?;
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden(tape, p, x)?;
        self.layers[3].forward(tape, p, h)
    }
}

/// One GRU block. Weights are stored gate-concatenated (update, reset,
/// candidate): `w` is `[in, 3H]`, `u` is `[H, 3H]`, `b` is `[3H]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruBlock {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruBlock {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        let w = params.add(&format!("{name}.w"), fan_in_uniform(rng, &[in_dim, 3 * hidden], in_dim))?;
        let u = params.add(&format!("{name}.u"), fan_in_uniform(rng, &[hidden, 3 * hidden], hidden))?;
        let b = params.add(&format!("{name}.b"), Tensor::zeros(&[3 * hidden]))?;
        Ok(Self {
            w,
            u,
            b,
            in_dim,
            hidden,
        })
    }

    /// `x` is `[R, in]`, `s` is `[R, H]`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, s: Var) -> Result<Var> {
        tape.gru_cell(x, s, p.var(self.w), p.var(self.u), p.var(self.b))
    }
}

//! Relation encoder: a 4-layer GRU runs over every directed node pair, and
//! two parallel skip MLPs turn the final edge state into a Gaussian
//! posterior over the relation state. A scalar centrality head shares the
//! first three layers of the mean network.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{GruBlock, Linear, SkipMlp};
use crate::params::{Bound, ModelParams};
use crate::physics::directed_pairs;
use crate::{rng, Error, Result, Tape, Tensor, Var};

pub const GRU_LAYERS: usize = 4;
pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Centrality pre-activations are clamped so `c` stays strictly inside
/// `(0, 1)` in 64-bit arithmetic.
pub const CENTRALITY_LOGIT_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub gru: [GruBlock; GRU_LAYERS],
    pub mean: SkipMlp,
    pub log_std: SkipMlp,
    pub centrality: Linear,
    pub node_dim: usize,
    pub hidden: usize,
    pub relation_dim: usize,
}

/// Per-edge Gaussian posterior, each `[R, d_r]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posterior {
    pub mean: Var,
    pub log_std: Var,
    pub std: Var,
}

/// Everything the encoder emits for a batch of edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeOutputs {
    pub posterior: Posterior,
    /// `[R]`, strictly inside `(0, 1)`.
    pub centrality: Var,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        rng: &mut R,
        node_dim: usize,
        hidden: usize,
        mlp_hidden: usize,
        relation_dim: usize,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(GRU_LAYERS);
        for l in 0..GRU_LAYERS {
            let input = if l == 0 { 2 * node_dim } else { hidden };
            blocks.push(GruBlock::new(params, rng, &format!("encoder.gru{l}"), input, hidden)?);
        }
        let mean = SkipMlp::new(params, rng, "encoder.mean", hidden, mlp_hidden, relation_dim)?;
        let log_std = SkipMlp::new(params, rng, "encoder.log_std", hidden, mlp_hidden, relation_dim)?;
        let centrality = Linear::new(params, rng, "encoder.centrality", mlp_hidden, 1)?;
        Ok(Self {
            gru: [blocks[0], blocks[1], blocks[2], blocks[3]],
            mean,
            log_std,
            centrality,
            node_dim,
            hidden,
            relation_dim,
        })
    }

    /// Per time step, the `[W·E, 2·node_dim]` matrix of `concat(n_i, n_j)`
    /// rows for every window `w` and directed pair `(i, j)`.
    ///
    /// Each window is a row-major `[T_E, N, node_dim]` slice; all windows
    /// must have the same length.
    pub fn edge_inputs(&self, windows: &[&[f64]], n_nodes: usize) -> Result<Vec<Tensor>> {
        if n_nodes < 2 {
            return Err(Error::contract(format!("need at least 2 nodes, got {n_nodes}")));
        }
        let d = self.node_dim;
        let frame = n_nodes * d;
        let len = windows.first().map_or(0, |w| w.len());
        if len == 0 || len % frame != 0 || windows.iter().any(|w| w.len() != len) {
            return Err(Error::contract(format!(
                "encoder windows must be non-empty multiples of N·d = {frame}"
            )));
        }
        if windows.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("encoder window".into()));
        }
        let t_e = len / frame;
        let pairs = directed_pairs(n_nodes);
        let rows = windows.len() * pairs.len();
        let mut out = Vec::with_capacity(t_e);
        for t in 0..t_e {
            let mut x = Vec::with_capacity(rows * 2 * d);
            for w in windows {
                let f = &w[t * frame..(t + 1) * frame];
                for &(i, j) in &pairs {
                    x.extend_from_slice(&f[i * d..(i + 1) * d]);
                    x.extend_from_slice(&f[j * d..(j + 1) * d]);
                }
            }
            out.push(Tensor::new(&[rows, 2 * d], x)?);
        }
        Ok(out)
    }

    /// Final top-layer GRU state for every (window, directed pair) row,
    /// `[W·E, H]`, starting from zero hidden states.
    pub fn encode_edges(&self, tape: &mut Tape, p: &Bound, windows: &[&[f64]], n_nodes: usize) -> Result<Var> {
        let inputs = self.edge_inputs(windows, n_nodes)?;
        let rows = inputs[0].shape()[0];
        let zero = tape.constant(Tensor::zeros(&[rows, self.hidden]));
        let mut states = [zero; GRU_LAYERS];
        for x in inputs {
            let mut input = tape.constant(x);
            for (block, s) in self.gru.iter().zip(states.iter_mut()) {
                *s = block.step(tape, p, input, *s)?;
                input = *s;
            }
        }
        Ok(states[GRU_LAYERS - 1])
    }

    fn posterior_from(&self, tape: &mut Tape, p: &Bound, edge: Var, mean_hidden: Var) -> Result<Posterior> {
        let mean = self.mean.layers[3].forward(tape, p, mean_hidden)?;
        let raw = self.log_std.forward(tape, p, edge)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        let std = tape.exp(log_std)?;
        Ok(Posterior { mean, log_std, std })
    }

    fn centrality_from(&self, tape: &mut Tape, p: &Bound, mean_hidden: Var) -> Result<Var> {
        let logit = self.centrality.forward(tape, p, mean_hidden)?;
        let rows = tape.shape(logit)[0];
        let logit = tape.clamp(logit, -CENTRALITY_LOGIT_BOUND, CENTRALITY_LOGIT_BOUND)?;
        let c = tape.sigmoid(logit)?;
        tape.reshape(c, &[rows])
    }

    pub fn posterior(&self, tape: &mut Tape, p: &Bound, edge: Var) -> Result<Posterior> {
        let h = self.mean.hidden(tape, p, edge)?;
        self.posterior_from(tape, p, edge, h)
    }

    /// `c = σ(H(edge))`, one value per row of `edge`.
    pub fn centrality_head(&self, tape: &mut Tape, p: &Bound, edge: Var) -> Result<Var> {
        let h = self.mean.hidden(tape, p, edge)?;
        self.centrality_from(tape, p, h)
    }

    /// Posterior and centrality with the shared hidden layers evaluated once.
    pub fn heads(&self, tape: &mut Tape, p: &Bound, edge: Var) -> Result<EdgeOutputs> {
        let h = self.mean.hidden(tape, p, edge)?;
        let posterior = self.posterior_from(tape, p, edge, h)?;
        let centrality = self.centrality_from(tape, p, h)?;
        Ok(EdgeOutputs {
            posterior,
            centrality,
        })
    }

    /// Posterior plus a relation state: `mean + std ⊙ ε` with `ε ~ N(0, I)`,
    /// or exactly `mean` when `rng` is `None`.
    pub fn relation_head<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        edge: Var,
        rng: Option<&mut R>,
    ) -> Result<(Posterior, Var)> {
        let post = self.posterior(tape, p, edge)?;
        let r = sample_relation(tape, &post, rng)?;
        Ok((post, r))
    }
}

/// Reparameterised draw from `post`; `None` returns the mean itself.
pub fn sample_relation<R: Rng + ?Sized>(tape: &mut Tape, post: &Posterior, rng: Option<&mut R>) -> Result<Var> {
    let Some(rng) = rng else {
        return Ok(post.mean);
    };
    let shape = tape.shape(post.std).to_vec();
    let n = tape.value(post.std).len();
    let mut eps = vec![0.0; n];
    eps.iter_mut().for_each(|e| *e = rng::normal(rng));
    let eps = tape.constant(Tensor::new(&shape, eps)?);
    let noise = tape.mul(post.std, eps)?;
    tape.add(post.mean, noise)
}

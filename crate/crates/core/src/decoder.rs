//! Relation decoder: centrality-gated pairwise influences, summed per
//! receiver and turned into a residual state update.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::SkipMlp;
use crate::params::{Bound, ModelParams};
use crate::physics::directed_pairs;
use crate::{rng, Error, Result, Tape, Tensor, Var};

/// Distribution of the random variable `ε` in the influence gate
/// `J(c) = 1 + (1 − c)·ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EpsilonMode {
    Off,
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub epsilon: EpsilonMode,
    /// Draw a fresh `ε` at every decoder step; otherwise one draw per edge
    /// is held for a whole rollout.
    pub resample_each_step: bool,
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            epsilon: EpsilonMode::Off,
            resample_each_step: true,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            epsilon: EpsilonMode::Gaussian { sigma },
            resample_each_step: true,
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self.epsilon, EpsilonMode::Off)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.epsilon {
            EpsilonMode::Off => 0.0,
            EpsilonMode::Gaussian { sigma } => sigma * rng::normal(rng),
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::off()
    }
}

fn check_centrality(c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::contract(format!("centrality {c} outside [0, 1]")));
    }
    Ok(())
}

/// `1 + (1 − c)·ε` with a fresh `ε`; exactly 1 when noise is off.
pub fn noise_gate<R: Rng + ?Sized>(c: f64, noise: &NoiseConfig, rng: &mut R) -> Result<f64> {
    check_centrality(c)?;
    if noise.is_off() {
        return Ok(1.0);
    }
    Ok(1.0 + (1.0 - c) * noise.draw(rng))
}

/// Row bookkeeping for `G` graphs of `N` nodes: edge row `g·E + e` carries
/// directed pair `e = (i, j)`, receiver row `g·N + i`, sender row `g·N + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeIndex {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub receivers: Vec<usize>,
    pub senders: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(n_graphs: usize, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::contract(format!("need at least 2 nodes, got {n_nodes}")));
        }
        let pairs = directed_pairs(n_nodes);
        let mut receivers = Vec::with_capacity(n_graphs * pairs.len());
        let mut senders = Vec::with_capacity(n_graphs * pairs.len());
        for g in 0..n_graphs {
            for &(i, j) in &pairs {
                receivers.push(g * n_nodes + i);
                senders.push(g * n_nodes + j);
            }
        }
        Ok(Self {
            n_graphs,
            n_nodes,
            receivers,
            senders,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.receivers.len()
    }

    pub fn n_node_rows(&self) -> usize {
        self.n_graphs * self.n_nodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoder {
    /// `K`: `concat(n_i, n_j, r_ij)` → influence.
    pub influence: SkipMlp,
    /// `L`: `concat(n_i, Σ_j f_ij)` → state change.
    pub update: SkipMlp,
    pub node_dim: usize,
    pub relation_dim: usize,
    pub influence_dim: usize,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        rng: &mut R,
        node_dim: usize,
        relation_dim: usize,
        mlp_hidden: usize,
        influence_dim: usize,
    ) -> Result<Self> {
        let influence = SkipMlp::new(
            params,
            rng,
            "decoder.influence",
            2 * node_dim + relation_dim,
            mlp_hidden,
            influence_dim,
        )?;
        let update = SkipMlp::new(params, rng, "decoder.update", node_dim + influence_dim, mlp_hidden, node_dim)?;
        Ok(Self {
            influence,
            update,
            node_dim,
            relation_dim,
            influence_dim,
        })
    }

    /// Gate `J(c)` for every edge row, or `None` when noise is off.
    pub fn gate<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        centralities: Var,
        eps: Option<&[f64]>,
        noise: &NoiseConfig,
        rng: &mut R,
    ) -> Result<Option<Var>> {
        if noise.is_off() {
            return Ok(None);
        }
        let n = tape.value(centralities).len();
        if let Some(bad) = tape.data(centralities).iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::contract(format!("centrality {bad} outside [0, 1]")));
        }
        let eps = match eps {
            Some(e) => e.to_vec(),
            None => (0..n).map(|_| noise.draw(rng)).collect(),
        };
        let eps = tape.constant(Tensor::new(&[n], eps)?);
        let neg = tape.scale(centralities, -1.0)?;
        let one_minus = tape.add_scalar(neg, 1.0)?;
        let scaled = tape.mul(one_minus, eps)?;
        Ok(Some(tape.add_scalar(scaled, 1.0)?))
    }

    /// `f_ij = J(c_ij)·K(concat(n_i, n_j, r_ij))` for a batch of edge rows.
    pub fn influence(
        &self,
        tape: &mut Tape,
        p: &Bound,
        receivers: Var,
        senders: Var,
        relations: Var,
        gate: Option<Var>,
    ) -> Result<Var> {
        let x = tape.concat(&[receivers, senders, relations], 1)?;
        let f = self.influence.forward(tape, p, x)?;
        match gate {
            Some(g) => tape.scale_rows(f, g),
            None => Ok(f),
        }
    }

    fn check_edges(&self, tape: &Tape, index: &EdgeIndex, nodes: Var, relations: Var, centralities: Var) -> Result<()> {
        let e = index.n_edges();
        if tape.shape(nodes) != [index.n_node_rows(), self.node_dim] {
            return Err(Error::shape("decoder nodes", tape.shape(nodes), &[index.n_node_rows(), self.node_dim]));
        }
        if tape.shape(relations) != [e, self.relation_dim] {
            return Err(Error::contract(format!(
                "decoder needs a relation for each of {e} directed pairs, got shape {:?}",
                tape.shape(relations)
            )));
        }
        if tape.value(centralities).len() != e {
            return Err(Error::contract(format!(
                "decoder needs a centrality for each of {e} directed pairs, got {}",
                tape.value(centralities).len()
            )));
        }
        Ok(())
    }

    fn step_gated(&self, tape: &mut Tape, p: &Bound, index: &EdgeIndex, nodes: Var, relations: Var, gate: Option<Var>) -> Result<Var> {
        let ni = tape.gather_rows(nodes, &index.receivers)?;
        let nj = tape.gather_rows(nodes, &index.senders)?;
        let f = self.influence(tape, p, ni, nj, relations, gate)?;
        let agg = tape.scatter_add_rows(f, &index.receivers, index.n_node_rows())?;
        let x = tape.concat(&[nodes, agg], 1)?;
        let delta = self.update.forward(tape, p, x)?;
        tape.add(nodes, delta)
    }

    /// One prediction step: `n_i + L(concat(n_i, Σ_{j≠i} f_ij))`.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        index: &EdgeIndex,
        nodes: Var,
        relations: Var,
        centralities: Var,
        noise: &NoiseConfig,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_edges(tape, index, nodes, relations, centralities)?;
        let gate = self.gate(tape, centralities, None, noise, rng)?;
        self.step_gated(tape, p, index, nodes, relations, gate)
    }

    /// Closed-loop prediction of `horizon` steps from `start`, relations and
    /// centralities held fixed. Returns one `[G·N, d]` node for each step.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        index: &EdgeIndex,
        start: Var,
        relations: Var,
        centralities: Var,
        horizon: usize,
        noise: &NoiseConfig,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        if horizon == 0 {
            return Err(Error::contract("rollout horizon must be >= 1"));
        }
        self.check_edges(tape, index, start, relations, centralities)?;
        let held: Option<Vec<f64>> = (!noise.is_off() && !noise.resample_each_step)
            .then(|| (0..index.n_edges()).map(|_| noise.draw(rng)).collect());
        let mut out = Vec::with_capacity(horizon);
        let mut nodes = start;
        for step in 0..horizon {
            let gate = self.gate(tape, centralities, held.as_deref(), noise, rng)?;
            nodes = self.step_gated(tape, p, index, nodes, relations, gate)?;
            if !tape.value(nodes).is_finite() {
                return Err(Error::Rollout { step });
            }
            out.push(nodes);
        }
        Ok(out)
    }
}

/// Convenience for callers that hold plain node rows: `[G·N, d]` constant.
pub fn node_rows(tape: &mut Tape, data: &[f64], rows: usize, node_dim: usize) -> Result<Var> {
    Ok(tape.constant(Tensor::new(&[rows, node_dim], data.to_vec())?))
}

//! The full encoder–decoder and its eval-mode helpers.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, EdgeIndex, NoiseConfig};
use crate::encoder::{sample_relation, Encoder};
use crate::params::ModelParams;
use crate::physics::STATE_DIM;
use crate::rng::{self, SimRng};
use crate::{Error, Result, Tape, Tensor};

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub node_dim: usize,
    /// GRU hidden size (edge state).
    pub edge_hidden: usize,
    /// Hidden width of every MLP.
    pub mlp_hidden: usize,
    pub relation_dim: usize,
    pub influence_dim: usize,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            node_dim: STATE_DIM,
            edge_hidden: 128,
            mlp_hidden: 196,
            relation_dim: 10,
            influence_dim: 100,
        }
    }

    pub fn desk() -> Self {
        Self {
            node_dim: STATE_DIM,
            edge_hidden: 32,
            mlp_hidden: 48,
            relation_dim: 4,
            influence_dim: 48,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.node_dim,
            self.edge_hidden,
            self.mlp_hidden,
            self.relation_dim,
            self.influence_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::config(format!("model dimensions must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Eval-mode relation estimates for a set of graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub n_graphs: usize,
    pub n_edges: usize,
    /// `[G·E, d_r]` posterior means.
    pub relations: Vec<f64>,
    /// `[G·E]`.
    pub centralities: Vec<f64>,
}

/// Start offsets of the encoder windows used to summarise an observation of
/// `observed` steps: every `stride` steps, always including the last one.
pub fn window_starts(observed: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || window > observed || stride == 0 {
        return Err(Error::config(format!(
            "cannot place encoder windows of {window} steps (stride {stride}) in {observed} observed steps"
        )));
    }
    let last = observed - window;
    let mut s: Vec<usize> = (0..=last).step_by(stride).collect();
    if s.last() != Some(&last) {
        s.push(last);
    }
    Ok(s)
}

/// Rows per eval-mode encoder tape.
const EVAL_ROW_BUDGET: usize = 2048;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, u64::MAX);
        let mut params = ModelParams::new();
        let encoder = Encoder::new(
            &mut params,
            &mut rng,
            config.node_dim,
            config.edge_hidden,
            config.mlp_hidden,
            config.relation_dim,
        )?;
        let decoder = Decoder::new(
            &mut params,
            &mut rng,
            config.node_dim,
            config.relation_dim,
            config.mlp_hidden,
            config.influence_dim,
        )?;
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    /// Averages posterior means and centralities over sliding encoder
    /// windows inside the first `observed` steps of each trajectory.
    ///
    /// `states` holds one `[T, N, d]` array per graph.
    pub fn infer(
        &self,
        states: &[&[f64]],
        n_nodes: usize,
        observed: usize,
        window: usize,
        stride: usize,
    ) -> Result<Inferred> {
        let d = self.config.node_dim;
        let frame = n_nodes * d;
        let starts = window_starts(observed, window, stride)?;
        if let Some(s) = states.iter().find(|s| s.len() < observed * frame) {
            return Err(Error::contract(format!(
                "trajectory of {} values is shorter than {observed} observed steps",
                s.len()
            )));
        }
        let n_edges = n_nodes * (n_nodes - 1);
        let dr = self.config.relation_dim;
        let mut relations = Vec::with_capacity(states.len() * n_edges * dr);
        let mut centralities = Vec::with_capacity(states.len() * n_edges);
        let per_graph = (starts.len() * n_edges).max(1);
        let chunk = (EVAL_ROW_BUDGET / per_graph).max(1);
        let inv = 1.0 / starts.len() as f64;
        for graphs in states.chunks(chunk) {
            let windows: Vec<&[f64]> = graphs
                .iter()
                .flat_map(|s| starts.iter().map(move |&t| &s[t * frame..(t + window) * frame]))
                .collect();
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let edge = self.encoder.encode_edges(&mut tape, &p, &windows, n_nodes)?;
            let out = self.encoder.heads(&mut tape, &p, edge)?;
            let mean = tape.data(out.posterior.mean);
            let cent = tape.data(out.centrality);
            for g in 0..graphs.len() {
                let mut r = alloc::vec![0.0; n_edges * dr];
                let mut c = alloc::vec![0.0; n_edges];
                for w in 0..starts.len() {
                    let row0 = (g * starts.len() + w) * n_edges;
                    for e in 0..n_edges {
                        c[e] += cent[row0 + e] * inv;
                        for k in 0..dr {
                            r[e * dr + k] += mean[(row0 + e) * dr + k] * inv;
                        }
                    }
                }
                relations.extend_from_slice(&r);
                centralities.extend_from_slice(&c);
            }
        }
        Ok(Inferred {
            n_graphs: states.len(),
            n_edges,
            relations,
            centralities,
        })
    }

    /// Eval-mode closed-loop prediction of `horizon` steps following state
    /// `start_step` of each trajectory. Returns `[G, horizon, N, d]`.
    #[allow(clippy::too_many_arguments)]
    pub fn predict(
        &self,
        states: &[&[f64]],
        n_nodes: usize,
        start_step: usize,
        horizon: usize,
        inferred: &Inferred,
        noise: &NoiseConfig,
        rng: &mut SimRng,
    ) -> Result<Vec<f64>> {
        let d = self.config.node_dim;
        let frame = n_nodes * d;
        let g = states.len();
        if inferred.n_graphs != g {
            return Err(Error::contract("relation estimates do not match trajectories"));
        }
        let mut start = Vec::with_capacity(g * frame);
        for s in states {
            start.extend_from_slice(&s[start_step * frame..(start_step + 1) * frame]);
        }
        let index = EdgeIndex::new(g, n_nodes)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let start = tape.constant(Tensor::new(&[g * n_nodes, d], start)?);
        let rel = tape.constant(Tensor::new(
            &[g * inferred.n_edges, self.config.relation_dim],
            inferred.relations.clone(),
        )?);
        let cent = tape.constant(Tensor::new(&[g * inferred.n_edges], inferred.centralities.clone())?);
        let steps = self
            .decoder
            .rollout(&mut tape, &p, &index, start, rel, cent, horizon, noise, rng)?;
        let mut out = alloc::vec![0.0; g * horizon * frame];
        for (h, v) in steps.iter().enumerate() {
            let data = tape.data(*v);
            for gi in 0..g {
                out[(gi * horizon + h) * frame..(gi * horizon + h + 1) * frame]
                    .copy_from_slice(&data[gi * frame..(gi + 1) * frame]);
            }
        }
        Ok(out)
    }

    /// Eval-mode relation states for one encoder window per graph, sampled
    /// when `rng` is given.
    pub fn relation_states(
        &self,
        windows: &[&[f64]],
        n_nodes: usize,
        rng: Option<&mut SimRng>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let edge = self.encoder.encode_edges(&mut tape, &p, windows, n_nodes)?;
        let post = self.encoder.posterior(&mut tape, &p, edge)?;
        let r = sample_relation(&mut tape, &post, rng)?;
        Ok(tape.data(r).to_vec())
    }
}

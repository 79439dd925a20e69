//! Two-dimensional interacting particle systems.
//!
//! Unit-mass particles interact pairwise through one of three relations:
//! a spring with a rest length, a gravity-like attraction whose magnitude
//! falls off as `k / r`, or nothing. Trajectories are produced with
//! velocity Verlet and carry the ground-truth relation labels.

mod dataset;
mod force;
mod integrate;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{
    generate_dataset, generate_trajectory, relation_vocabulary, Combo, Dataset, DatasetSizes,
    GenerationStats, Normalization, SimConfig, Split,
};
pub use force::{pair_force, ForceEval, Vec2};
pub use integrate::{integrate, IntegrateOptions, Integration};

/// Values of the state vector per node: `x, y, vx, vy`.
pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Spring,
    Gravity,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub kind: RelationKind,
    pub coefficient: f64,
    /// Only meaningful for springs; zero otherwise.
    pub rest_length: f64,
}

impl RelationSpec {
    pub fn spring(coefficient: f64, rest_length: f64) -> Result<Self> {
        Self {
            kind: RelationKind::Spring,
            coefficient,
            rest_length,
        }
        .validated()
    }

    pub fn gravity(coefficient: f64) -> Result<Self> {
        Self {
            kind: RelationKind::Gravity,
            coefficient,
            rest_length: 0.0,
        }
        .validated()
    }

    pub fn none() -> Self {
        Self {
            kind: RelationKind::None,
            coefficient: 0.0,
            rest_length: 0.0,
        }
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.coefficient >= 0.0 && self.coefficient.is_finite()) {
            return Err(Error::config(format!(
                "relation coefficient must be finite and >= 0, got {}",
                self.coefficient
            )));
        }
        match self.kind {
            RelationKind::None if self.coefficient != 0.0 => {
                Err(Error::config("a None relation must have coefficient 0"))
            }
            RelationKind::Spring if !(self.rest_length > 0.0) => Err(Error::config(format!(
                "spring rest length must be > 0, got {}",
                self.rest_length
            ))),
            _ => Ok(self),
        }
    }
}

/// Directed node pairs `(i, j)`, `i != j`, ascending in `i` then `j`.
pub fn directed_pairs(n_nodes: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_nodes * n_nodes.saturating_sub(1));
    for i in 0..n_nodes {
        for j in 0..n_nodes {
            if i != j {
                out.push((i, j));
            }
        }
    }
    out
}

/// Position of the directed pair `(i, j)` in [`directed_pairs`] order.
pub fn pair_index(n_nodes: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n_nodes && j < n_nodes);
    i * (n_nodes - 1) + if j < i { j } else { j - 1 }
}

/// Symmetric, complete relation assignment over all node pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationGraph {
    n_nodes: usize,
    /// Upper triangle, row-major over `i < j`.
    specs: Vec<RelationSpec>,
}

impl RelationGraph {
    /// Builds a graph by asking `f(i, j)` for every unordered pair `i < j`.
    pub fn from_fn(n_nodes: usize, mut f: impl FnMut(usize, usize) -> RelationSpec) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::config(format!("need at least 2 nodes, got {n_nodes}")));
        }
        let mut specs = Vec::with_capacity(n_nodes * (n_nodes - 1) / 2);
        for i in 0..n_nodes {
            for j in i + 1..n_nodes {
                specs.push(f(i, j).validated()?);
            }
        }
        Ok(Self { n_nodes, specs })
    }

    pub fn uniform(n_nodes: usize, spec: RelationSpec) -> Result<Self> {
        Self::from_fn(n_nodes, |_, _| spec)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    fn tri(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * (2 * self.n_nodes - a - 1) / 2 + (b - a - 1)
    }

    /// Relation between `i` and `j` (same for both orders).
    pub fn get(&self, i: usize, j: usize) -> &RelationSpec {
        assert!(i != j, "no self relation");
        &self.specs[self.tri(i, j)]
    }
}

/// Simulated system observed at `steps` regularly spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_nodes: usize,
    pub steps: usize,
    pub dt: f64,
    /// `[steps × n_nodes × 4]`, row-major.
    pub states: Vec<f64>,
    /// Relation label per directed pair, [`directed_pairs`] order.
    pub labels: Vec<usize>,
    pub graph: Option<RelationGraph>,
}

impl Trajectory {
    /// State of all nodes at time step `t`, `[n_nodes × 4]`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.n_nodes * STATE_DIM;
        &self.states[t * w..(t + 1) * w]
    }

    pub fn node(&self, t: usize, i: usize) -> &[f64] {
        let f = self.frame(t);
        &f[i * STATE_DIM..(i + 1) * STATE_DIM]
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_invariants() {
        assert!(RelationSpec::spring(1.0, 0.0).is_err());
        assert!(RelationSpec::spring(-1.0, 1.0).is_err());
        assert!(RelationSpec::gravity(2.0).is_ok());
        let bad_none = RelationSpec {
            kind: RelationKind::None,
            coefficient: 1.0,
            rest_length: 0.0,
        };
        assert!(bad_none.validated().is_err());
    }

    #[test]
    fn graph_is_symmetric_and_complete() {
        let g = RelationGraph::from_fn(4, |i, j| {
            RelationSpec::spring(1.0 + (i * 10 + j) as f64, 1.0).unwrap()
        })
        .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
        }
        assert_eq!(g.get(1, 3).coefficient, 14.0);
        assert!(RelationGraph::uniform(1, RelationSpec::none()).is_err());
    }

    #[test]
    fn pair_order() {
        let p = directed_pairs(3);
        assert_eq!(p, [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
        for (k, &(i, j)) in p.iter().enumerate() {
            assert_eq!(pair_index(3, i, j), k);
        }
    }
}

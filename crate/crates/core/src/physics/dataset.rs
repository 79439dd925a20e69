use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{directed_pairs, integrate, IntegrateOptions, RelationGraph, RelationSpec, Trajectory, STATE_DIM};
use crate::rng::{self, SimRng};
use crate::{math, Error, Result};

/// The eight relation mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combo {
    /// spring & none
    A,
    /// spring & gravity
    B,
    /// gravity & none
    C,
    /// spring & gravity & none
    D,
    /// weak/moderate/strong spring & none
    E,
    /// weak/moderate/strong gravity & none
    F,
    /// springs with 100 coefficients
    G,
    /// 100 spring and 100 gravity coefficients
    H,
}

impl Combo {
    pub const ALL: [Combo; 8] = [
        Combo::A,
        Combo::B,
        Combo::C,
        Combo::D,
        Combo::E,
        Combo::F,
        Combo::G,
        Combo::H,
    ];

    pub fn letter(self) -> char {
        match self {
            Combo::A => 'a',
            Combo::B => 'b',
            Combo::C => 'c',
            Combo::D => 'd',
            Combo::E => 'e',
            Combo::F => 'f',
            Combo::G => 'g',
            Combo::H => 'h',
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Combo::A => "spring & none",
            Combo::B => "spring & gravity",
            Combo::C => "gravity & none",
            Combo::D => "spring & gravity & none",
            Combo::E => "3 spring & none",
            Combo::F => "3 gravity & none",
            Combo::G => "100 spring",
            Combo::H => "100 spring & 100 gravity",
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Combo::ALL
            .into_iter()
            .find(|c| lower.len() == 1 && lower.starts_with(c.letter()))
            .ok_or_else(|| Error::config(format!("unknown relation combination {s:?} (expected a-h)")))
    }
}

/// Simulation constants. Every field has a documented default; none of
/// them is prescribed by the relation taxonomy itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_nodes: usize,
    /// Recorded time steps per trajectory.
    pub steps: usize,
    /// Time between recorded steps.
    pub dt: f64,
    /// Verlet sub-steps per recorded step.
    pub substeps: usize,
    /// Initial positions are uniform on `[-box_half, box_half]²`.
    pub box_half: f64,
    /// Initial velocity components are `N(0, vel_std²)`.
    pub vel_std: f64,
    pub spring_coefficient: f64,
    pub spring_rest_length: f64,
    pub gravity_coefficient: f64,
    /// Weak/moderate/strong multiples of the base coefficient.
    pub strength_ratios: [f64; 3],
    /// Number of coefficients in the fine-grained mixes.
    pub grid_levels: usize,
    /// Fine-grained coefficients span `[grid_min, grid_max] × base`.
    pub grid_min: f64,
    pub grid_max: f64,
    pub softening: f64,
    pub divergence_bound: f64,
    pub max_retries: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_nodes: 5,
            steps: 99,
            dt: 0.1,
            substeps: 50,
            box_half: 1.5,
            vel_std: 0.5,
            spring_coefficient: 4.0,
            spring_rest_length: 0.02,
            gravity_coefficient: 0.05,
            strength_ratios: [1.0, 2.0, 4.0],
            grid_levels: 100,
            grid_min: 0.5,
            grid_max: 4.0,
            softening: 0.1,
            divergence_bound: 1e3,
            max_retries: 32,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("box_half", self.box_half),
            ("spring_rest_length", self.spring_rest_length),
            ("softening", self.softening),
            ("divergence_bound", self.divergence_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.n_nodes < 2 {
            return Err(Error::config("n_nodes must be >= 2"));
        }
        if self.steps == 0 || self.substeps == 0 {
            return Err(Error::config("steps and substeps must be >= 1"));
        }
        if self.grid_levels < 2 || !(self.grid_max > self.grid_min && self.grid_min > 0.0) {
            return Err(Error::config("grid needs >= 2 levels and 0 < grid_min < grid_max"));
        }
        if self.vel_std < 0.0 || self.spring_coefficient < 0.0 || self.gravity_coefficient < 0.0 {
            return Err(Error::config("coefficients and vel_std must be >= 0"));
        }
        Ok(())
    }

    fn grid(&self, base: f64) -> impl Iterator<Item = f64> + '_ {
        let levels = self.grid_levels;
        (0..levels).map(move |i| {
            base * (self.grid_min + (self.grid_max - self.grid_min) * i as f64 / (levels - 1) as f64)
        })
    }
}

/// Label vocabulary of a mix: label `k` is `vocabulary[k]`. `None`, when
/// present, is label 0; strengths increase with the label.
pub fn relation_vocabulary(combo: Combo, cfg: &SimConfig) -> Result<Vec<RelationSpec>> {
    let spring = |k: f64| RelationSpec::spring(k, cfg.spring_rest_length);
    let gravity = RelationSpec::gravity;
    let (ks, kg) = (cfg.spring_coefficient, cfg.gravity_coefficient);
    let none = RelationSpec::none();
    let mut v = Vec::new();
    match combo {
        Combo::A => v.extend([none, spring(ks)?]),
        Combo::B => v.extend([spring(ks)?, gravity(kg)?]),
        Combo::C => v.extend([none, gravity(kg)?]),
        Combo::D => v.extend([none, spring(ks)?, gravity(kg)?]),
        Combo::E => {
            v.push(none);
            for r in cfg.strength_ratios {
                v.push(spring(ks * r)?);
            }
        }
        Combo::F => {
            v.push(none);
            for r in cfg.strength_ratios {
                v.push(gravity(kg * r)?);
            }
        }
        Combo::G => {
            for k in cfg.grid(ks) {
                v.push(spring(k)?);
            }
        }
        Combo::H => {
            for k in cfg.grid(ks) {
                v.push(spring(k)?);
            }
            for k in cfg.grid(kg) {
                v.push(gravity(k)?);
            }
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl DatasetSizes {
    pub fn desk() -> Self {
        Self {
            train: 500,
            valid: 50,
            test: 100,
        }
    }

    pub fn paper() -> Self {
        Self {
            train: 5000,
            valid: 500,
            test: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(Error::config(format!(
                "every split needs at least one trajectory, got {}/{}/{}",
                self.train, self.valid, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn stream_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Valid => 1 << 40,
            Split::Test => 2 << 40,
        }
    }
}

/// Affine normalisation applied to stored states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub pos_mean: f64,
    pub pos_std: f64,
    pub vel_mean: f64,
    pub vel_std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            pos_mean: 0.0,
            pos_std: 1.0,
            vel_mean: 0.0,
            vel_std: 1.0,
        }
    }

    /// Pooled mean / standard deviation of positions and of velocities.
    pub fn fit(trajectories: &[Trajectory]) -> Result<Self> {
        let mut acc = [[0.0f64; 3]; 2]; // count, sum, sum of squares
        for t in trajectories {
            for node in t.states.chunks_exact(STATE_DIM) {
                for (c, &v) in node.iter().enumerate() {
                    let a = &mut acc[c / 2];
                    a[0] += 1.0;
                    a[1] += v;
                    a[2] += v * v;
                }
            }
        }
        let stats = |a: [f64; 3]| {
            let mean = a[1] / a[0];
            (mean, math::sqrt((a[2] / a[0] - mean * mean).max(0.0)))
        };
        let (pos_mean, pos_std) = stats(acc[0]);
        let (vel_mean, vel_std) = stats(acc[1]);
        let n = Self {
            pos_mean,
            pos_std,
            vel_mean,
            vel_std,
        };
        if !(n.pos_std > 0.0 && n.vel_std > 0.0 && n.pos_mean.is_finite() && n.vel_mean.is_finite()) {
            return Err(Error::NonFinite(format!("normalisation constants {n:?}")));
        }
        Ok(n)
    }

    pub fn apply(&self, t: &mut Trajectory) {
        for node in t.states.chunks_exact_mut(STATE_DIM) {
            node[0] = (node[0] - self.pos_mean) / self.pos_std;
            node[1] = (node[1] - self.pos_mean) / self.pos_std;
            node[2] = (node[2] - self.vel_mean) / self.vel_std;
            node[3] = (node[3] - self.vel_mean) / self.vel_std;
        }
    }

    pub fn invert_node(&self, node: &mut [f64]) {
        node[0] = node[0] * self.pos_std + self.pos_mean;
        node[1] = node[1] * self.pos_std + self.pos_mean;
        node[2] = node[2] * self.vel_std + self.vel_mean;
        node[3] = node[3] * self.vel_std + self.vel_mean;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    /// Trajectories regenerated because the integrator left its bound.
    pub retries: usize,
    /// Force evaluations clamped by the softening length.
    pub softened: usize,
}

impl core::ops::AddAssign for GenerationStats {
    fn add_assign(&mut self, o: Self) {
        self.retries += o.retries;
        self.softened += o.softened;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub combo: Combo,
    pub config: SimConfig,
    pub sizes: DatasetSizes,
    pub seed: u64,
    pub vocabulary: Vec<RelationSpec>,
    pub normalization: Normalization,
    pub train: Vec<Trajectory>,
    pub valid: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub stats: GenerationStats,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Trajectory] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        self.vocabulary
            .iter()
            .map(|r| match r.kind {
                super::RelationKind::None => String::from("none"),
                super::RelationKind::Spring => format!("spring(k={})", r.coefficient),
                super::RelationKind::Gravity => format!("gravity(k={})", r.coefficient),
            })
            .collect()
    }

    /// Normalises raw splits with constants fitted on the training split.
    pub fn assemble(
        combo: Combo,
        config: SimConfig,
        seed: u64,
        mut train: Vec<Trajectory>,
        mut valid: Vec<Trajectory>,
        mut test: Vec<Trajectory>,
        stats: GenerationStats,
    ) -> Result<Self> {
        let vocabulary = relation_vocabulary(combo, &config)?;
        let normalization = Normalization::fit(&train)?;
        for t in train.iter_mut().chain(valid.iter_mut()).chain(test.iter_mut()) {
            normalization.apply(t);
        }
        Ok(Self {
            combo,
            sizes: DatasetSizes {
                train: train.len(),
                valid: valid.len(),
                test: test.len(),
            },
            config,
            seed,
            vocabulary,
            normalization,
            train,
            valid,
            test,
            stats,
        })
    }
}

fn sample_once(
    rng: &mut SimRng,
    cfg: &SimConfig,
    vocabulary: &[RelationSpec],
) -> Result<(RelationGraph, Vec<usize>, Vec<f64>)> {
    let n = cfg.n_nodes;
    let mut pair_labels = Vec::with_capacity(n * (n - 1) / 2);
    let graph = RelationGraph::from_fn(n, |_, _| {
        let k = rng::below(rng, vocabulary.len());
        pair_labels.push(k);
        vocabulary[k]
    })?;
    let tri = |i: usize, j: usize| {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * (2 * n - a - 1) / 2 + (b - a - 1)
    };
    let labels = directed_pairs(n)
        .into_iter()
        .map(|(i, j)| pair_labels[tri(i, j)])
        .collect();
    let mut initial = Vec::with_capacity(n * STATE_DIM);
    for _ in 0..n {
        initial.push(rng::uniform(rng, -cfg.box_half, cfg.box_half));
        initial.push(rng::uniform(rng, -cfg.box_half, cfg.box_half));
    }
    let mut state = Vec::with_capacity(n * STATE_DIM);
    for i in 0..n {
        state.extend_from_slice(&initial[2 * i..2 * i + 2]);
        state.push(cfg.vel_std * rng::normal(rng));
        state.push(cfg.vel_std * rng::normal(rng));
    }
    Ok((graph, labels, state))
}

/// One raw (unnormalised) trajectory of `split`. Its random stream depends
/// only on `(seed, split, index)`, so any generation order gives identical
/// results.
pub fn generate_trajectory(
    combo: Combo,
    cfg: &SimConfig,
    seed: u64,
    split: Split,
    index: usize,
) -> Result<(Trajectory, GenerationStats)> {
    cfg.validate()?;
    let vocabulary = relation_vocabulary(combo, cfg)?;
    let opts = IntegrateOptions {
        substeps: cfg.substeps,
        softening: cfg.softening,
        bound: cfg.divergence_bound,
    };
    let stream = split.stream_base() + index as u64;
    let mut stats = GenerationStats::default();
    for attempt in 0..=cfg.max_retries as u64 {
        let mut rng = rng::stream(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)), stream);
        let (graph, labels, initial) = sample_once(&mut rng, cfg, &vocabulary)?;
        match integrate(&graph, &initial, cfg.dt, cfg.steps, &opts) {
            Ok(out) => {
                stats.softened += out.softened;
                let mut t = out.trajectory;
                t.labels = labels;
                return Ok((t, stats));
            }
            Err(Error::SimulationDiverged { .. }) => stats.retries += 1,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "trajectory {index} of {} diverged {} times; loosen divergence_bound or shrink dt",
        split.name(),
        cfg.max_retries + 1
    )))
}

/// Generates all three splits serially and normalises them.
pub fn generate_dataset(combo: Combo, cfg: &SimConfig, sizes: DatasetSizes, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    sizes.validate()?;
    let mut stats = GenerationStats::default();
    let mut split = |s: Split, count: usize| -> Result<Vec<Trajectory>> {
        (0..count)
            .map(|i| {
                let (t, st) = generate_trajectory(combo, cfg, seed, s, i)?;
                stats += st;
                Ok(t)
            })
            .collect()
    };
    let train = split(Split::Train, sizes.train)?;
    let valid = split(Split::Valid, sizes.valid)?;
    let test = split(Split::Test, sizes.test)?;
    Dataset::assemble(combo, cfg.clone(), seed, train, valid, test, stats)
}

//! Dataset directories and parallel generation.
//!
//! A dataset directory holds `manifest.json` plus two files per split:
//!
//! ```text
//! <split>_states.bin  f32 little-endian, [S × T × N × 4] row-major
//!                     (trajectory, time step, node, x/y/vx/vy), normalised
//! <split>_labels.bin  f32 little-endian, [S × N × (N−1)] relation-type index
//!                     per directed pair, receivers ascending then senders
//! ```
//!
//! `<split>` is `train`, `valid` or `test`. States are stored after
//! normalisation; the constants are in the manifest.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use relnet_core::physics::{
    generate_trajectory, relation_vocabulary, Combo, Dataset, DatasetSizes, GenerationStats,
    Normalization, RelationSpec, SimConfig, Split, Trajectory, STATE_DIM,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonio::{read_json, write_json};

pub const FORMAT: &str = "relnet-dataset";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub count: usize,
    pub states: String,
    pub states_shape: [usize; 4],
    pub labels: String,
    pub labels_shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub dtype: String,
    pub byte_order: String,
    pub combo: Combo,
    pub seed: u64,
    pub sizes: DatasetSizes,
    pub n_nodes: usize,
    pub steps: usize,
    pub dt: f64,
    pub simulation: SimConfig,
    pub normalization: Normalization,
    pub vocabulary: Vec<RelationSpec>,
    pub label_names: Vec<String>,
    pub generation: GenerationStats,
    pub train: SplitFiles,
    pub valid: SplitFiles,
    pub test: SplitFiles,
}

impl DatasetManifest {
    pub fn files(&self, s: Split) -> &SplitFiles {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

const SPLITS: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

/// Same output as [`relnet_core::physics::generate_dataset`], with
/// trajectories simulated in parallel.
pub fn generate_parallel(combo: Combo, cfg: &SimConfig, sizes: DatasetSizes, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    sizes.validate()?;
    let mut stats = GenerationStats::default();
    let mut splits = Vec::with_capacity(3);
    for (s, count) in SPLITS.into_iter().zip([sizes.train, sizes.valid, sizes.test]) {
        let out: Vec<(Trajectory, GenerationStats)> = (0..count)
            .into_par_iter()
            .map(|i| generate_trajectory(combo, cfg, seed, s, i))
            .collect::<relnet_core::Result<_>>()?;
        let mut trajs = Vec::with_capacity(count);
        for (t, st) in out {
            stats += st;
            trajs.push(t);
        }
        splits.push(trajs);
    }
    let test = splits.pop().expect("three splits");
    let valid = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset::assemble(combo, cfg.clone(), seed, train, valid, test, stats)?)
}

fn f32_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.len() != 4 * expected {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", 4 * expected, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect())
}

/// Writes `ds` into `dir` (created if missing).
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let n = ds.config.n_nodes;
    let steps = ds.config.steps;
    let mut files = Vec::with_capacity(3);
    for s in SPLITS {
        let trajs = ds.split(s);
        let states = format!("{}_states.bin", s.name());
        let labels = format!("{}_labels.bin", s.name());
        let sp = dir.join(&states);
        let lp = dir.join(&labels);
        let sb = f32_bytes(trajs.iter().flat_map(|t| t.states.iter().map(|&v| v as f32)));
        let lb = f32_bytes(trajs.iter().flat_map(|t| t.labels.iter().map(|&l| l as f32)));
        fs::write(&sp, sb).map_err(Error::io(&sp))?;
        fs::write(&lp, lb).map_err(Error::io(&lp))?;
        files.push(SplitFiles {
            count: trajs.len(),
            states,
            states_shape: [trajs.len(), steps, n, STATE_DIM],
            labels,
            labels_shape: [trajs.len(), n, n - 1],
        });
    }
    let test = files.pop().expect("three splits");
    let valid = files.pop().expect("three splits");
    let train = files.pop().expect("three splits");
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        dtype: "f32".into(),
        byte_order: "little".into(),
        combo: ds.combo,
        seed: ds.seed,
        sizes: ds.sizes,
        n_nodes: n,
        steps,
        dt: ds.config.dt,
        simulation: ds.config.clone(),
        normalization: ds.normalization,
        vocabulary: ds.vocabulary.clone(),
        label_names: ds.label_names(),
        generation: ds.stats,
        train,
        valid,
        test,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let m: DatasetManifest = read_json(&path)?;
    if m.format != FORMAT || m.dtype != "f32" || m.byte_order != "little" {
        return Err(Error::format(&path, "not a little-endian f32 relnet dataset"));
    }
    Ok(m)
}

/// Loads a dataset directory. States come back as the stored `f32` values
/// widened to `f64`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let n = m.n_nodes;
    let vocab = relation_vocabulary(m.combo, &m.simulation)?;
    if vocab != m.vocabulary {
        return Err(Error::format(dir.join(MANIFEST), "relation vocabulary does not match the combo"));
    }
    let mut splits = Vec::with_capacity(3);
    for s in SPLITS {
        let f = m.files(s);
        if f.states_shape != [f.count, m.steps, n, STATE_DIM] || f.labels_shape != [f.count, n, n - 1] {
            return Err(Error::format(dir.join(MANIFEST), format!("inconsistent shapes for {}", s.name())));
        }
        let per_state = m.steps * n * STATE_DIM;
        let per_label = n * (n - 1);
        let states = read_f32(&dir.join(&f.states), f.count * per_state)?;
        let labels_path = dir.join(&f.labels);
        let labels = read_f32(&labels_path, f.count * per_label)?;
        let mut trajs = Vec::with_capacity(f.count);
        for k in 0..f.count {
            let lab = labels[k * per_label..(k + 1) * per_label]
                .iter()
                .map(|&v| {
                    let i = v as usize;
                    if v < 0.0 || i as f32 != v || i >= vocab.len() {
                        Err(Error::format(&labels_path, format!("invalid label {v}")))
                    } else {
                        Ok(i)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            trajs.push(Trajectory {
                n_nodes: n,
                steps: m.steps,
                dt: m.dt,
                states: states[k * per_state..(k + 1) * per_state].iter().map(|&v| v as f64).collect(),
                labels: lab,
                graph: None,
            });
        }
        splits.push(trajs);
    }
    let test = splits.pop().expect("three splits");
    let valid = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        combo: m.combo,
        config: m.simulation,
        sizes: m.sizes,
        seed: m.seed,
        vocabulary: vocab,
        normalization: m.normalization,
        train,
        valid,
        test,
        stats: m.generation,
    })
}

//! Tensor checkpoints: a JSON manifest (names, shapes, dtype, byte
//! offsets) next to a flat little-endian `f64` blob.
//!
//! ```text
//! <stem>.json   {"format": "relnet-tensors", "dtype": "f64", "blob": "<stem>.bin",
//!                "tensors": [{"name", "shape", "offset", "len"}, ...], "meta": {...}}
//! <stem>.bin    concatenated tensors, 8 bytes per value, offsets in bytes
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use relnet_core::model::{Model, ModelConfig};
use relnet_core::optim::{Adam, AdamConfig};
use relnet_core::params::ModelParams;
use relnet_core::train::{EpochRecord, TrainState};
use relnet_core::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::jsonio::{read_json, write_json};

pub const FORMAT: &str = "relnet-tensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub format: String,
    pub dtype: String,
    pub byte_order: String,
    pub blob: String,
    pub total_bytes: usize,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: Value,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes named tensors under `stem` (`stem.json` + `stem.bin`).
pub fn write_tensors<'a>(
    stem: &Path,
    tensors: impl IntoIterator<Item = (String, &'a [usize], &'a [f64])>,
    meta: Value,
) -> Result<()> {
    let (json, bin) = paths(stem);
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, shape, data) in tensors {
        entries.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset: blob.len(),
            len: data.len(),
        });
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = TensorManifest {
        format: FORMAT.into(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        blob: bin.file_name().expect("stem has a file name").to_string_lossy().into_owned(),
        total_bytes: blob.len(),
        tensors: entries,
        meta,
    };
    fs::write(&bin, &blob).map_err(Error::io(&bin))?;
    write_json(&json, &manifest)
}

/// Reads a checkpoint written by [`write_tensors`].
pub fn read_tensors(stem: &Path) -> Result<(TensorManifest, Vec<(String, Tensor)>)> {
    let (json, _) = paths(stem);
    let manifest: TensorManifest = read_json(&json)?;
    if manifest.format != FORMAT || manifest.dtype != "f64" || manifest.byte_order != "little" {
        return Err(Error::format(&json, "not a little-endian f64 relnet tensor checkpoint"));
    }
    let bin = json.with_file_name(&manifest.blob);
    let blob = fs::read(&bin).map_err(Error::io(&bin))?;
    if blob.len() != manifest.total_bytes {
        return Err(Error::format(
            &bin,
            format!("expected {} bytes, found {}", manifest.total_bytes, blob.len()),
        ));
    }
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let end = e.offset + 8 * e.len;
        if end > blob.len() || e.shape.iter().product::<usize>() != e.len {
            return Err(Error::format(&bin, format!("tensor {} is out of bounds or misshapen", e.name)));
        }
        let data = blob[e.offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        out.push((e.name.clone(), Tensor::new(&e.shape, data)?));
    }
    Ok((manifest, out))
}

fn param_entries<'a>(prefix: &'a str, p: &'a ModelParams) -> impl Iterator<Item = (String, &'a [usize], &'a [f64])> + 'a {
    p.iter().map(move |(n, t)| (format!("{prefix}{n}"), t.shape(), t.data()))
}

fn fill_params(stem: &Path, prefix: &str, found: &[(String, Tensor)], into: &mut ModelParams) -> Result<()> {
    let names: Vec<String> = into.names().to_vec();
    for (k, name) in names.iter().enumerate() {
        let key = format!("{prefix}{name}");
        let Some((_, src)) = found.iter().find(|(n, _)| *n == key) else {
            return Err(Error::format(stem.with_extension("json"), format!("missing tensor {key}")));
        };
        let dst = &mut into.tensors_mut()[k];
        if dst.shape() != src.shape() {
            return Err(Error::format(
                stem.with_extension("json"),
                format!("tensor {key} has shape {:?}, expected {:?}", src.shape(), dst.shape()),
            ));
        }
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    model: ModelConfig,
}

pub fn save_model(stem: &Path, model: &Model) -> Result<()> {
    let meta = serde_json::to_value(ModelMeta { model: model.config }).map_err(Error::json(stem))?;
    write_tensors(stem, param_entries("", &model.params), meta)
}

pub fn load_model(stem: &Path) -> Result<Model> {
    let (manifest, tensors) = read_tensors(stem)?;
    let meta: ModelMeta = serde_json::from_value(manifest.meta).map_err(Error::json(stem.with_extension("json")))?;
    let mut model = Model::new(meta.model, 0)?;
    fill_params(stem, "", &tensors, &mut model.params)?;
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    model: ModelConfig,
    epoch: usize,
    adam: AdamConfig,
    adam_step: u64,
    best_val_mse: Option<f64>,
    best_epoch: usize,
    history: Vec<EpochRecord>,
}

/// Full training state: current and best weights plus Adam moments.
pub fn save_state(stem: &Path, model: &Model, state: &TrainState) -> Result<()> {
    let meta = StateMeta {
        model: model.config,
        epoch: state.epoch,
        adam: state.adam.config,
        adam_step: state.adam.step,
        best_val_mse: state.best_val_mse.is_finite().then_some(state.best_val_mse),
        best_epoch: state.best_epoch,
        history: state.history.clone(),
    };
    let meta = serde_json::to_value(meta).map_err(Error::json(stem))?;
    let names = state.params.names();
    let shapes: Vec<&[usize]> = state.params.iter().map(|(_, t)| t.shape()).collect();
    let moments = names
        .iter()
        .zip(&shapes)
        .zip(state.adam.m.iter().zip(&state.adam.v))
        .flat_map(|((n, s), (m, v))| {
            [
                (format!("adam.m.{n}"), *s, m.as_slice()),
                (format!("adam.v.{n}"), *s, v.as_slice()),
            ]
        });
    let all = param_entries("params.", &state.params)
        .chain(param_entries("best.", &state.best_params))
        .chain(moments);
    write_tensors(stem, all, meta)
}

pub fn load_state(stem: &Path) -> Result<(Model, TrainState)> {
    let (manifest, tensors) = read_tensors(stem)?;
    let json = stem.with_extension("json");
    let meta: StateMeta = serde_json::from_value(manifest.meta).map_err(Error::json(&json))?;
    let mut model = Model::new(meta.model, 0)?;
    let mut params = model.params.clone();
    fill_params(stem, "params.", &tensors, &mut params)?;
    let mut best = model.params.clone();
    fill_params(stem, "best.", &tensors, &mut best)?;
    let mut adam = Adam::new(&params, meta.adam);
    adam.step = meta.adam_step;
    for (k, name) in params.names().iter().enumerate() {
        for (slot, key) in [(&mut adam.m[k], format!("adam.m.{name}")), (&mut adam.v[k], format!("adam.v.{name}"))] {
            let Some((_, t)) = tensors.iter().find(|(n, _)| *n == key) else {
                return Err(Error::format(&json, format!("missing tensor {key}")));
            };
            if t.len() != slot.len() {
                return Err(Error::format(&json, format!("tensor {key} has the wrong length")));
            }
            slot.copy_from_slice(t.data());
        }
    }
    model.params.load_from(&params)?;
    let state = TrainState {
        epoch: meta.epoch,
        params,
        adam,
        best_val_mse: meta.best_val_mse.unwrap_or(f64::INFINITY),
        best_epoch: meta.best_epoch,
        best_params: best,
        history: meta.history,
    };
    Ok((model, state))
}

//! The four commands as library functions.
//!
//! Run directory written by [`train`]:
//!
//! ```text
//! train.manifest.json  resolved config, dataset path and seeds
//! metrics.jsonl        one record per finished epoch
//! state.{json,bin}     resumable training state, rewritten every epoch
//! best.{json,bin}      best-validation weights
//! final.{json,bin}     weights after the last epoch
//! ```
//!
//! [`eval`] adds `eval_<split>.json`; [`analyze`] adds `accuracy.json`,
//! `silhouette.csv`, `scatter.csv` and `centrality_by_type.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use relnet_core::analysis::{analyze_relations, AnalysisOptions};
use relnet_core::model::Model;
use relnet_core::physics::{Split, STATE_DIM};
use relnet_core::train::{self, EpochRecord, EvalReport, Observer, TrainState};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_model, load_state, save_model, save_state};
use crate::config::RunConfig;
use crate::dataset_io::{generate_parallel, load_dataset, read_manifest, save_dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::jsonio::{read_json, write_json, write_report};
use crate::num::{fmt6, round_json};

pub const TRAIN_MANIFEST: &str = "train.manifest.json";
pub const METRICS: &str = "metrics.jsonl";
pub const STATE: &str = "state";
pub const BEST: &str = "best";
pub const FINAL: &str = "final";

/// Echo of a command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandManifest {
    pub command: String,
    pub seed: u64,
    pub dataset: Option<String>,
    pub run: Option<String>,
    pub config: RunConfig,
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Simulates the dataset described by `cfg` into `out`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let ds = generate_parallel(cfg.combo, &cfg.simulation, cfg.sizes, cfg.seed)?;
    let manifest = save_dataset(out, &ds)?;
    let echo = CommandManifest {
        command: "generate".into(),
        seed: cfg.seed,
        dataset: Some(path_string(out)),
        run: None,
        config: cfg.clone(),
    };
    write_json(&out.join("generate.manifest.json"), &echo)?;
    Ok(manifest)
}

/// Progress sink for [`train`].
pub trait Progress {
    fn epoch(&mut self, _record: &EpochRecord) {}
}

pub struct Quiet;
impl Progress for Quiet {}

/// Prints one line per epoch to stderr.
pub struct Stderr;

impl Progress for Stderr {
    fn epoch(&mut self, r: &EpochRecord) {
        eprintln!(
            "epoch {:>4}  lr {}  loss {}  np {}  kl {}  sd {}  c {}  val_mse {}{}",
            r.epoch,
            fmt6(r.lr),
            fmt6(r.loss.total),
            fmt6(r.loss.np),
            fmt6(r.loss.kl),
            fmt6(r.loss.sd),
            fmt6(r.loss.centrality),
            fmt6(r.val_mse),
            if r.best { "  *" } else { "" }
        );
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Stop after this many epochs in this session; the run stays
    /// resumable.
    pub stop_after: Option<usize>,
}

struct RunObserver<'a> {
    dir: &'a Path,
    model: Model,
    progress: &'a mut dyn Progress,
    remaining: Option<usize>,
    io_error: Option<Error>,
}

impl RunObserver<'_> {
    fn persist(&mut self, record: &EpochRecord, state: &TrainState) -> Result<()> {
        self.model.params.load_from(&state.params)?;
        save_state(&self.dir.join(STATE), &self.model, state)?;
        if record.best {
            self.model.params.load_from(&state.best_params)?;
            save_model(&self.dir.join(BEST), &self.model)?;
        }
        write_metrics(&self.dir.join(METRICS), &state.history)
    }
}

impl Observer for RunObserver<'_> {
    fn on_epoch(&mut self, record: &EpochRecord, state: &TrainState) -> relnet_core::Result<()> {
        if let Err(e) = self.persist(record, state) {
            self.io_error = Some(e);
            return Err(relnet_core::Error::Contract("could not write the run directory".into()));
        }
        self.progress.epoch(record);
        if let Some(r) = &mut self.remaining {
            *r = r.saturating_sub(1);
        }
        Ok(())
    }

    fn should_stop(&mut self) -> bool {
        self.remaining == Some(0)
    }
}

pub fn write_metrics(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in history {
        let mut v = serde_json::to_value(r).map_err(Error::json(path))?;
        round_json(&mut v);
        serde_json::to_writer(&mut buf, &v).map_err(Error::json(path))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(Error::io(path))
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs_done: usize,
    pub finished: bool,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub resumed_from: Option<usize>,
}

/// Trains on the dataset in `data` into `run`, resuming when `run`
/// already holds a state written under the same configuration.
pub fn train(
    cfg: &RunConfig,
    data: &Path,
    run: &Path,
    opts: TrainOptions,
    progress: &mut dyn Progress,
) -> Result<TrainOutcome> {
    let dm = read_manifest(data)?;
    let mut cfg = cfg.clone();
    cfg.combo = dm.combo;
    cfg.simulation = dm.simulation.clone();
    cfg.sizes = dm.sizes;
    cfg.validate()?;
    if cfg.model.node_dim != STATE_DIM {
        return Err(Error::Config(format!(
            "model.node_dim must be {STATE_DIM} to match the stored states"
        )));
    }
    let ds = load_dataset(data)?;
    fs::create_dir_all(run).map_err(Error::io(run))?;
    let echo = CommandManifest {
        command: "train".into(),
        seed: cfg.seed,
        dataset: Some(path_string(data)),
        run: Some(path_string(run)),
        config: cfg.clone(),
    };
    let manifest_path = run.join(TRAIN_MANIFEST);
    let state_stem = run.join(STATE);
    let resume = if state_stem.with_extension("json").exists() {
        let previous: CommandManifest = read_json(&manifest_path)?;
        if previous.config != cfg {
            return Err(Error::Config(format!(
                "{} holds a run with a different configuration",
                run.display()
            )));
        }
        let (model, state) = load_state(&state_stem)?;
        if model.config != cfg.model {
            return Err(Error::format(state_stem.with_extension("json"), "model shape differs from the config"));
        }
        Some(state)
    } else {
        write_json(&manifest_path, &echo)?;
        None
    };
    let resumed_from = resume.as_ref().map(|s| s.epoch);
    let mut model = Model::new(cfg.model, cfg.seed)?;
    let mut observer = RunObserver {
        dir: run,
        model: model.clone(),
        progress,
        remaining: opts.stop_after,
        io_error: None,
    };
    if observer.remaining == Some(0) {
        return Ok(TrainOutcome {
            epochs_done: resumed_from.unwrap_or(0),
            finished: false,
            best_epoch: 0,
            best_val_mse: f64::INFINITY,
            resumed_from,
        });
    }
    let result = train::train(&mut model, &ds, &cfg.training, resume, &mut observer);
    if let Some(e) = observer.io_error.take() {
        return Err(e);
    }
    let state = result?;
    let finished = state.epoch >= cfg.training.epochs;
    if finished {
        save_model(&run.join(FINAL), &model)?;
    }
    Ok(TrainOutcome {
        epochs_done: state.epoch,
        finished,
        best_epoch: state.best_epoch,
        best_val_mse: state.best_val_mse,
        resumed_from,
    })
}

/// Loads the training manifest of `run`.
pub fn run_manifest(run: &Path) -> Result<CommandManifest> {
    read_json(&run.join(TRAIN_MANIFEST))
}

/// Dataset path recorded for `run` unless `data` overrides it.
pub fn resolve_data(run: &Path, data: Option<&Path>) -> Result<PathBuf> {
    match data {
        Some(d) => Ok(d.to_path_buf()),
        None => run_manifest(run)?
            .dataset
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("run manifest names no dataset; pass --data".into())),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        _ => Err(Error::Config(format!("unknown split {s:?} (expected train, valid or test)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub split: String,
    pub checkpoint: String,
    pub dataset: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Rolls the best checkpoint forward on `split` and writes
/// `eval_<split>.json` into `out`.
pub fn eval(cfg: &RunConfig, run: &Path, data: &Path, split: &str, out: &Path) -> Result<EvalFile> {
    let s = parse_split(split)?;
    let model = load_model(&run.join(BEST))?;
    let ds = load_dataset(data)?;
    let report = train::evaluate(&model, ds.split(s), &cfg.training, cfg.eval.horizon)?;
    let file = EvalFile {
        split: s.name().into(),
        checkpoint: BEST.into(),
        dataset: path_string(data),
        report,
    };
    fs::create_dir_all(out).map_err(Error::io(out))?;
    write_report(&out.join(format!("eval_{}.json", s.name())), &file)?;
    Ok(file)
}

/// Summary written to `accuracy.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub combo: String,
    pub k: usize,
    pub accuracy: f64,
    pub n_test_edges: usize,
    pub chosen_k: usize,
    pub silhouette: Vec<(usize, f64)>,
    pub silhouette_points: usize,
    pub silhouette_seed: u64,
    pub explained_variance: Vec<f64>,
    /// Mean test centrality per relation type, labels in vocabulary order.
    pub centrality_by_type: Vec<TypeCentrality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCentrality {
    pub label: usize,
    pub name: String,
    pub count: usize,
    /// Absent when no test edge has this label.
    pub mean: Option<f64>,
}

/// Runs the relation analysis with the best checkpoint and writes its
/// reports into `out`.
pub fn analyze(cfg: &RunConfig, run: &Path, data: &Path, out: &Path) -> Result<AccuracyReport> {
    let model = load_model(&run.join(BEST))?;
    let ds = load_dataset(data)?;
    let n_labels = ds.vocabulary.len();
    let opts = AnalysisOptions {
        k: cfg.analysis.k.unwrap_or(n_labels),
        k_range: cfg.analysis.k_range.clone(),
        max_silhouette_points: cfg.analysis.max_silhouette_points,
        kmeans: cfg.analysis.kmeans,
        seed: cfg.seed,
        observed_steps: cfg.training.observed_steps,
        window: cfg.training.encoder_window,
        stride: cfg.training.eval_stride,
        n_labels,
        projection_dim: 2,
    };
    let a = analyze_relations(&model, &ds.train, &ds.test, &opts)?;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let n_train_edges = a.train.relations.len() / model.config.relation_dim;
    let names = ds.label_names();
    let centrality_by_type: Vec<TypeCentrality> = names
        .iter()
        .enumerate()
        .map(|(l, name)| TypeCentrality {
            label: l,
            name: name.clone(),
            count: a.label_counts[l],
            mean: (a.label_counts[l] > 0).then_some(a.centrality_by_label[l]),
        })
        .collect();
    let report = AccuracyReport {
        combo: ds.combo.letter().to_string(),
        k: a.k,
        accuracy: a.accuracy,
        n_test_edges: a.test_labels.len(),
        chosen_k: a.choose.best_k,
        silhouette: a.choose.scores.clone(),
        silhouette_points: a.choose.subsample.as_ref().map_or(n_train_edges, Vec::len),
        silhouette_seed: cfg.seed,
        explained_variance: a.projection.eigenvalues.clone(),
        centrality_by_type,
    };
    write_report(&out.join("accuracy.json"), &report)?;

    let path = out.join("silhouette.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    w.write_record(["k", "silhouette"]).map_err(Error::csv(&path))?;
    for (k, s) in &a.choose.scores {
        w.write_record([k.to_string(), fmt6(*s)]).map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;

    let path = out.join("scatter.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    let d = a.projection.out_dim;
    let mut header = vec!["trajectory".to_string(), "receiver".into(), "sender".into()];
    header.extend((0..d).map(|i| format!("pc{}", i + 1)));
    header.extend(["label".into(), "label_name".into(), "cluster".into(), "centrality".into()]);
    w.write_record(&header).map_err(Error::csv(&path))?;
    let n = ds.config.n_nodes;
    let pairs = relnet_core::physics::directed_pairs(n);
    for (e, &label) in a.test_labels.iter().enumerate() {
        let (i, j) = pairs[e % pairs.len()];
        let mut row = vec![(e / pairs.len()).to_string(), i.to_string(), j.to_string()];
        row.extend(a.projection.projected[e * d..(e + 1) * d].iter().map(|&v| fmt6(v)));
        row.extend([
            label.to_string(),
            names[label].clone(),
            a.test_assignments[e].to_string(),
            fmt6(a.test.centralities[e]),
        ]);
        w.write_record(&row).map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;

    let path = out.join("centrality_by_type.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    w.write_record(["label", "label_name", "count", "mean_centrality"])
        .map_err(Error::csv(&path))?;
    for t in &report.centrality_by_type {
        let mean = t.mean.map(fmt6).unwrap_or_default();
        w.write_record([t.label.to_string(), t.name.clone(), t.count.to_string(), mean])
            .map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;

    let echo = CommandManifest {
        command: "analyze".into(),
        seed: cfg.seed,
        dataset: Some(path_string(data)),
        run: Some(path_string(run)),
        config: cfg.clone(),
    };
    write_json(&out.join("analyze.manifest.json"), &echo)?;
    Ok(report)
}

/// Writes the eval invocation echo next to its report.
pub fn write_eval_manifest(cfg: &RunConfig, run: &Path, data: &Path, out: &Path) -> Result<()> {
    let echo = CommandManifest {
        command: "eval".into(),
        seed: cfg.seed,
        dataset: Some(path_string(data)),
        run: Some(path_string(run)),
        config: cfg.clone(),
    };
    write_json(&out.join("eval.manifest.json"), &echo)
}

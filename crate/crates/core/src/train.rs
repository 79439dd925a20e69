//! Optimisation loop and trajectory-prediction evaluation.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::decoder::{EdgeIndex, NoiseConfig};
use crate::encoder::sample_relation;
use crate::losses::{self, KlSign, LossParts, LossValues, LossWeights};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bound, ModelParams};
use crate::physics::{Dataset, Trajectory};
use crate::rng::{self, SimRng};
use crate::schedule::{fixed_windows, one_cycle_lr, sample_windows, SampledWindows};
use crate::{Error, Result, Tape, Tensor, Var};

/// Optimisation and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub weights: LossWeights,
    pub kl_sign: KlSign,
    /// Encoder windows per trajectory for the standard-deviation loss.
    pub m: usize,
    /// Encoder window length `T_E`, in states.
    pub encoder_window: usize,
    /// Decoder prediction horizon `T_D`, in steps.
    pub decoder_horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub sparsity_p: Option<f64>,
    pub seed: u64,
    /// Sample encoder/decoder windows independently at random; when off,
    /// encoder windows start at 0 and the decoder window mid-trajectory.
    pub random_sampling: bool,
    pub noise: NoiseConfig,
    pub adam: AdamConfig,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Observed prefix used at evaluation time.
    pub observed_steps: usize,
    /// Offset between the sliding encoder windows averaged at evaluation.
    pub eval_stride: usize,
    /// Rollout length of the per-epoch validation error.
    pub val_horizon: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainingConfig {
    pub fn desk() -> Self {
        Self {
            weights: LossWeights::default(),
            kl_sign: KlSign::Divergence,
            m: 2,
            encoder_window: 10,
            decoder_horizon: 10,
            epochs: 150,
            batch_size: 16,
            lr_max: 1e-2,
            sparsity_p: None,
            seed: 0,
            random_sampling: true,
            noise: NoiseConfig::off(),
            adam: AdamConfig::default(),
            grad_clip: None,
            observed_steps: 49,
            eval_stride: 3,
            val_horizon: 10,
        }
    }

    pub fn paper() -> Self {
        Self {
            m: 5,
            epochs: 1000,
            batch_size: 64,
            lr_max: 1e-3,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.encoder_window == 0 || self.decoder_horizon == 0 {
            return Err(Error::config("m, encoder_window and decoder_horizon must be >= 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::config(format!("lr_max must be > 0, got {}", self.lr_max)));
        }
        if let Some(p) = self.sparsity_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("sparsity_p = {p} outside [0, 1]")));
            }
        }
        if self.eval_stride == 0 || self.val_horizon == 0 || self.observed_steps == 0 {
            return Err(Error::config("eval_stride, val_horizon and observed_steps must be >= 1"));
        }
        Ok(())
    }

    /// Windows for one trajectory of `t` states: the decoder window covers
    /// its start state plus `T_D` predicted states.
    pub fn windows(&self, rng: &mut SimRng, t: usize) -> Result<SampledWindows> {
        let dec = self.decoder_horizon + 1;
        if self.random_sampling {
            sample_windows(rng, t, self.encoder_window, dec, self.m)
        } else {
            fixed_windows(t, self.encoder_window, dec, self.m)
        }
    }
}

/// Builds the objective for one batch on `tape`.
///
/// The `m` encoder windows of every trajectory are encoded together; the
/// standard-deviation loss compares their sampled relation states, the
/// KL term covers all of their posteriors, and the first window feeds the
/// decoder and the centrality loss.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    p: &Bound,
    trajs: &[&Trajectory],
    windows: &[SampledWindows],
    cfg: &TrainingConfig,
    rng: &mut SimRng,
) -> Result<(Var, LossParts)> {
    let b = trajs.len();
    if b == 0 || windows.len() != b {
        return Err(Error::contract("batch needs one window set per trajectory"));
    }
    let n = trajs[0].n_nodes;
    let d = model.config.node_dim;
    let frame = n * d;
    let (t_e, t_d) = (cfg.encoder_window, cfg.decoder_horizon);
    let m = windows[0].encoder_starts.len();
    let mut enc: Vec<&[f64]> = Vec::with_capacity(m * b);
    for k in 0..m {
        for (tr, w) in trajs.iter().zip(windows) {
            let s = w.encoder_starts[k];
            enc.push(&tr.states[s * frame..(s + t_e) * frame]);
        }
    }
    let edge = model.encoder.encode_edges(tape, p, &enc, n)?;
    let out = model.encoder.heads(tape, p, edge)?;
    let r = sample_relation(tape, &out.posterior, Some(rng))?;
    let be = b * n * (n - 1);
    let mut samples = Vec::with_capacity(m);
    for k in 0..m {
        samples.push(tape.narrow(r, 0, k * be, be)?);
    }
    let sd = losses::relation_sd_loss(tape, &samples)?;
    let kl = losses::kl_loss(tape, out.posterior.mean, out.posterior.std)?;
    let cent = tape.narrow(out.centrality, 0, 0, be)?;
    let centrality = losses::centrality_loss(tape, cent, cfg.sparsity_p)?;

    let mut truth = Vec::with_capacity(t_d * b * frame);
    for h in 1..=t_d {
        for (tr, w) in trajs.iter().zip(windows) {
            truth.extend_from_slice(tr.frame(w.decoder_start + h));
        }
    }
    let mut start = Vec::with_capacity(b * frame);
    for (tr, w) in trajs.iter().zip(windows) {
        start.extend_from_slice(tr.frame(w.decoder_start));
    }
    let index = EdgeIndex::new(b, n)?;
    let start = tape.constant(Tensor::new(&[b * n, d], start)?);
    let preds = model.decoder.rollout(tape, p, &index, start, samples[0], cent, t_d, &cfg.noise, rng)?;
    let pred = tape.concat(&preds, 0)?;
    let truth = tape.constant(Tensor::new(&[t_d * b * n, d], truth)?);
    let np = losses::node_prediction_loss(tape, pred, truth)?;
    let parts = LossParts {
        np,
        kl,
        sd,
        centrality,
    };
    let total = losses::total_loss(tape, &parts, &cfg.weights, cfg.kl_sign)?;
    Ok((total, parts))
}

/// Per-step and overall rollout error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_trajectories: usize,
    pub observed_steps: usize,
    pub horizon: usize,
    pub mse: f64,
    pub mse_per_step: Vec<f64>,
}

/// Observes the first `observed_steps` states, infers relations in eval
/// mode, rolls out `horizon` steps from the last observed state and scores
/// against the simulator.
pub fn evaluate(model: &Model, trajs: &[Trajectory], cfg: &TrainingConfig, horizon: usize) -> Result<EvalReport> {
    let Some(first) = trajs.first() else {
        return Err(Error::contract("evaluate needs at least one trajectory"));
    };
    let n = first.n_nodes;
    let obs = cfg.observed_steps;
    if obs + horizon > first.steps || horizon == 0 {
        return Err(Error::config(format!(
            "cannot observe {obs} and predict {horizon} steps of a {}-step trajectory",
            first.steps
        )));
    }
    let frame = n * model.config.node_dim;
    let mut per_step = alloc::vec![0.0; horizon];
    let mut rng = rng::stream(cfg.seed, u64::MAX - 1);
    for chunk in trajs.chunks(64) {
        let states: Vec<&[f64]> = chunk.iter().map(|t| t.states.as_slice()).collect();
        let inferred = model.infer(&states, n, obs, cfg.encoder_window, cfg.eval_stride)?;
        let pred = model.predict(&states, n, obs - 1, horizon, &inferred, &NoiseConfig::off(), &mut rng)?;
        for (g, t) in chunk.iter().enumerate() {
            for h in 0..horizon {
                let p = &pred[(g * horizon + h) * frame..(g * horizon + h + 1) * frame];
                let truth = t.frame(obs + h);
                per_step[h] += p.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
    }
    let denom = (trajs.len() * frame) as f64;
    per_step.iter_mut().for_each(|v| *v /= denom);
    let mse = per_step.iter().sum::<f64>() / horizon as f64;
    Ok(EvalReport {
        n_trajectories: trajs.len(),
        observed_steps: obs,
        horizon,
        mse,
        mse_per_step: per_step,
    })
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's last batch.
    pub lr: f64,
    /// Batch-averaged loss terms.
    pub loss: LossValues,
    pub val_mse: f64,
    pub best: bool,
}

/// Everything needed to continue an interrupted run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub params: ModelParams,
    pub adam: Adam,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub best_params: ModelParams,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn fresh(model: &Model, cfg: &TrainingConfig) -> Self {
        Self {
            epoch: 0,
            params: model.params.clone(),
            adam: Adam::new(&model.params, cfg.adam),
            best_val_mse: f64::INFINITY,
            best_epoch: 0,
            best_params: model.params.clone(),
            history: Vec::new(),
        }
    }
}

/// Receives progress; IO lives with the caller.
pub trait Observer {
    fn on_epoch(&mut self, _record: &EpochRecord, _state: &TrainState) -> Result<()> {
        Ok(())
    }

    /// Checked after every epoch; `true` ends training early with a state
    /// that can be resumed.
    fn should_stop(&mut self) -> bool {
        false
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl Observer for Silent {}

fn epoch_rng(seed: u64, epoch: usize) -> SimRng {
    rng::stream(seed, (1 << 32) + epoch as u64)
}

pub fn batches_per_epoch(n_train: usize, batch_size: usize) -> usize {
    n_train.div_ceil(batch_size)
}

/// Mean validation error over `val_horizon` rollout steps.
pub fn validation_mse(model: &Model, trajs: &[Trajectory], cfg: &TrainingConfig) -> Result<f64> {
    Ok(evaluate(model, trajs, cfg, cfg.val_horizon)?.mse)
}

/// Trains `model` on the training split, validating after every epoch.
///
/// Pass a saved [`TrainState`] to resume. On return `model.params` holds
/// the final weights; the best-validation weights are in the state.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainingConfig,
    resume: Option<TrainState>,
    observer: &mut dyn Observer,
) -> Result<TrainState> {
    cfg.validate()?;
    let train_set = &data.train;
    let Some(first) = train_set.first() else {
        return Err(Error::config("empty training split"));
    };
    let t = first.steps;
    let per_epoch = batches_per_epoch(train_set.len(), cfg.batch_size);
    let total_steps = cfg.epochs * per_epoch;
    let mut state = match resume {
        Some(s) => {
            model.params.load_from(&s.params)?;
            s
        }
        None => TrainState::fresh(model, cfg),
    };
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng::below(&mut rng, i + 1));
        }
        let mut sums = LossValues::default();
        let mut lr = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            lr = one_cycle_lr(epoch * per_epoch + bi, total_steps, cfg.lr_max)?;
            let trajs: Vec<&Trajectory> = idx.iter().map(|&i| &train_set[i]).collect();
            let windows = trajs
                .iter()
                .map(|tr| cfg.windows(&mut rng, tr.steps.min(t)))
                .collect::<Result<Vec<_>>>()?;
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape);
            let (total, parts) = batch_loss(model, &mut tape, &p, &trajs, &windows, cfg, &mut rng)?;
            let values = LossValues::read(&tape, &parts, total);
            if !values.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    lr,
                    np: values.np,
                    kl: values.kl,
                    sd: values.sd,
                    centrality: values.centrality,
                });
            }
            tape.backward(total)?;
            model.params.zero_grad();
            model.params.accumulate_grads(&tape, &p)?;
            if let Some(c) = cfg.grad_clip {
                model.params.clip_grad_norm(c);
            }
            state.adam.step(&mut model.params, lr)?;
            sums.np += values.np;
            sums.kl += values.kl;
            sums.sd += values.sd;
            sums.centrality += values.centrality;
            sums.total += values.total;
        }
        let k = per_epoch as f64;
        let loss = LossValues {
            np: sums.np / k,
            kl: sums.kl / k,
            sd: sums.sd / k,
            centrality: sums.centrality / k,
            total: sums.total / k,
        };
        let val_mse = validation_mse(model, &data.valid, cfg)?;
        let best = val_mse < state.best_val_mse;
        if best {
            state.best_val_mse = val_mse;
            state.best_epoch = epoch;
            state.best_params = model.params.clone();
        }
        state.epoch += 1;
        state.params = model.params.clone();
        let record = EpochRecord {
            epoch,
            lr,
            loss,
            val_mse,
            best,
        };
        state.history.push(record.clone());
        observer.on_epoch(&record, &state)?;
        if observer.should_stop() {
            break;
        }
    }
    Ok(state)
}

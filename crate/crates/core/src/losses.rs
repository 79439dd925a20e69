//! Objective terms: node prediction, KL, relation standard deviation and
//! centrality losses, and their weighted sum.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tape, Tensor, Var};

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub np: f64,
    pub kl: f64,
    pub sd: f64,
    pub centrality: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            np: 1.0,
            kl: 0.1,
            sd: 1.0,
            centrality: 0.001,
        }
    }
}

/// Sign applied to the KL divergence in the objective. `Divergence`
/// penalises distance from the prior; `Negated` subtracts it instead.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlSign {
    #[default]
    Divergence,
    Negated,
}

/// Scalar values of the loss terms for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub np: f64,
    pub kl: f64,
    pub sd: f64,
    pub centrality: f64,
    pub total: f64,
}

/// Tape nodes of the four terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossParts {
    pub np: Var,
    pub kl: Var,
    pub sd: Var,
    pub centrality: Var,
}

/// Mean squared error over every entry.
pub fn node_prediction_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(truth) {
        return Err(Error::shape("node_prediction_loss", tape.shape(pred), tape.shape(truth)));
    }
    let diff = tape.sub(pred, truth)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// Mean over entries of `KL(N(μ, σ²) ‖ N(0, 1)) = ½(μ² + σ² − 1 − ln σ²)`.
pub fn kl_loss(tape: &mut Tape, mean: Var, std: Var) -> Result<Var> {
    if tape.shape(mean) != tape.shape(std) {
        return Err(Error::shape("kl_loss", tape.shape(mean), tape.shape(std)));
    }
    if let Some(s) = tape.data(std).iter().find(|s| !(**s > 0.0)) {
        return Err(Error::contract(format!("kl_loss needs std > 0, got {s}")));
    }
    let mu2 = tape.square(mean)?;
    let var = tape.square(std)?;
    let log_std = tape.log(std)?;
    let log_var = tape.scale(log_std, 2.0)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, log_var)?;
    let c = tape.add_scalar(b, -1.0)?;
    let m = tape.mean(c)?;
    tape.scale(m, 0.5)
}

/// Closed-form KL of one component, for reporting and tests.
pub fn kl_divergence(mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::contract(format!("kl_divergence needs sigma > 0, got {sigma}")));
    }
    Ok(0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * libm::log(sigma)))
}

/// Population standard deviation across the `m` samples, per entry,
/// averaged over entries. Each sample is `[E, d_r]`.
///
/// Deviations are taken relative to the first sample, so identical samples
/// give exactly zero.
pub fn relation_sd_loss(tape: &mut Tape, samples: &[Var]) -> Result<Var> {
    let Some(&first) = samples.first() else {
        return Err(Error::contract("relation_sd_loss needs m >= 1 samples"));
    };
    for &s in &samples[1..] {
        if tape.shape(s) != tape.shape(first) {
            return Err(Error::shape("relation_sd_loss", tape.shape(first), tape.shape(s)));
        }
    }
    let m = samples.len() as f64;
    let mut shifted = Vec::with_capacity(samples.len());
    for &s in samples {
        shifted.push(tape.sub(s, first)?);
    }
    let mut total = shifted[0];
    for &d in &shifted[1..] {
        total = tape.add(total, d)?;
    }
    let centre = tape.scale(total, 1.0 / m)?;
    let mut ss = None;
    for &d in &shifted {
        let dev = tape.sub(d, centre)?;
        let sq = tape.square(dev)?;
        ss = Some(match ss {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    let var = tape.scale(ss.expect("m >= 1"), 1.0 / m)?;
    let sd = tape.sqrt(var)?;
    tape.mean(sd)
}

/// Indicator of the entries in the lowest `p` fraction: entry `k` is 1 iff
/// its rank in a stable ascending sort is below `p·n`.
pub fn low_quantile_mask(c: &[f64], p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
    let cut = p * c.len() as f64;
    let mut mask = alloc::vec![0.0; c.len()];
    for (rank, &k) in order.iter().enumerate() {
        if (rank as f64) < cut {
            mask[k] = 1.0;
        }
    }
    mask
}

/// Without a prior: mean of `−ln(1 − c)`. With sparsity prior `p`: entries
/// in the lowest `p` fraction of the batch are pushed toward 0 and the rest
/// toward 1, i.e. mean of `−δ ln(1 − c) − (1 − δ) ln c`.
pub fn centrality_loss(tape: &mut Tape, c: Var, sparsity_p: Option<f64>) -> Result<Var> {
    let values = tape.data(c).to_vec();
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::contract(format!("centrality {bad} outside (0, 1)")));
    }
    let neg = tape.scale(c, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let log_keep = tape.log(one_minus)?;
    let Some(p) = sparsity_p else {
        let m = tape.mean(log_keep)?;
        return tape.scale(m, -1.0);
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("sparsity prior p = {p} outside [0, 1]")));
    }
    let shape = tape.shape(c).to_vec();
    let mask = low_quantile_mask(&values, p);
    let inv: Vec<f64> = mask.iter().map(|d| 1.0 - d).collect();
    let mask = tape.constant(Tensor::new(&shape, mask)?);
    let inv = tape.constant(Tensor::new(&shape, inv)?);
    let log_c = tape.log(c)?;
    let a = tape.mul(mask, log_keep)?;
    let b = tape.mul(inv, log_c)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    tape.scale(m, -1.0)
}

/// `λ_NP·L_NP ± λ_KL·L_KL + λ_SD·L_SD + λ_c·L_c`.
pub fn total_loss(tape: &mut Tape, parts: &LossParts, w: &LossWeights, kl_sign: KlSign) -> Result<Var> {
    let kl_w = match kl_sign {
        KlSign::Divergence => w.kl,
        KlSign::Negated => -w.kl,
    };
    let np = tape.scale(parts.np, w.np)?;
    let kl = tape.scale(parts.kl, kl_w)?;
    let sd = tape.scale(parts.sd, w.sd)?;
    let c = tape.scale(parts.centrality, w.centrality)?;
    let a = tape.add(np, kl)?;
    let b = tape.add(a, sd)?;
    tape.add(b, c)
}

impl LossValues {
    pub fn read(tape: &Tape, parts: &LossParts, total: Var) -> Self {
        Self {
            np: tape.data(parts.np)[0],
            kl: tape.data(parts.kl)[0],
            sd: tape.data(parts.sd)[0],
            centrality: tape.data(parts.centrality)[0],
            total: tape.data(total)[0],
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.np, self.kl, self.sd, self.centrality, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

//! Window sampling and the one-cycle learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{math, rng, Error, Result};

/// Start indices of the `m` encoder windows and the decoder window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledWindows {
    pub encoder_starts: Vec<usize>,
    pub decoder_start: usize,
}

fn check(t: usize, t_e: usize, t_d: usize, m: usize) -> Result<()> {
    if m == 0 || t_e == 0 || t_d == 0 || t < t_e || t < t_d {
        return Err(Error::config(format!(
            "cannot place windows T_E={t_e}, T_D={t_d} (m={m}) in a trajectory of {t} steps"
        )));
    }
    Ok(())
}

/// Independent uniform starts: `t_E ∈ [0, T − T_E]` (m times) and
/// `t_D ∈ [0, T − T_D]`.
pub fn sample_windows<R: Rng + ?Sized>(
    rng: &mut R,
    t: usize,
    t_e: usize,
    t_d: usize,
    m: usize,
) -> Result<SampledWindows> {
    check(t, t_e, t_d, m)?;
    let encoder_starts = (0..m).map(|_| rng::below(rng, t - t_e + 1)).collect();
    let decoder_start = rng::below(rng, t - t_d + 1);
    Ok(SampledWindows {
        encoder_starts,
        decoder_start,
    })
}

/// Windows without random sampling: every encoder window starts at 0 and
/// the decoder window at mid-trajectory (moved earlier if it would not fit).
pub fn fixed_windows(t: usize, t_e: usize, t_d: usize, m: usize) -> Result<SampledWindows> {
    check(t, t_e, t_d, m)?;
    Ok(SampledWindows {
        encoder_starts: alloc::vec![0; m],
        decoder_start: (t / 2).min(t - t_d),
    })
}

/// Initial learning rate is `lr_max / WARMUP_DIV`.
pub const WARMUP_DIV: f64 = 25.0;
/// Final learning rate is `lr_max / FINAL_DIV`.
pub const FINAL_DIV: f64 = 1e4;
pub const WARMUP_FRACTION: f64 = 0.3;

/// Step at which the schedule peaks.
pub fn one_cycle_peak(total_steps: usize) -> usize {
    libm::floor(WARMUP_FRACTION * total_steps as f64) as usize
}

/// Linear warm-up from `lr_max/25` to `lr_max` over the first 30% of steps,
/// then cosine annealing down to `lr_max/10⁴` at the last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, lr_max: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::contract(format!("step {step} outside schedule of {total_steps} steps")));
    }
    let peak = one_cycle_peak(total_steps);
    let lo = lr_max / WARMUP_DIV;
    let end = lr_max / FINAL_DIV;
    if step < peak {
        return Ok(lo + (lr_max - lo) * step as f64 / peak as f64);
    }
    let span = total_steps - 1 - peak;
    if span == 0 {
        return Ok(lr_max);
    }
    let frac = (step - peak) as f64 / span as f64;
    Ok(end + (lr_max - end) * 0.5 * (1.0 + math::cos(core::f64::consts::PI * frac)))
}

//! Central finite-difference checks of tape gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::params::{Bound, ModelParams};
use crate::{Result, Tape, Tensor, Var};

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| sqrt(v.map(|x| x * x).sum());
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn numeric_grad(x: &Tensor, h: f64, mut eval: impl FnMut(&Tensor) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    let mut probe = x.clone();
    for (i, o) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        *o = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Worst per-input [`relative_error`] between the reverse-mode gradient of
/// the scalar `f(inputs)` and central differences with step `h`.
pub fn max_rel_error<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.data(root)[0])
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec);
        let numeric = numeric_grad(x, h, |probe| {
            let mut vals = inputs.to_vec();
            vals[k] = probe.clone();
            eval(&vals)
        })?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// [`relative_error`] per parameter tensor for a scalar objective built
/// from bound parameters. `f` must be deterministic.
pub fn param_rel_errors<F>(params: &ModelParams, h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let eval = |ps: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let root = f(&mut tape, &b)?;
        Ok(tape.data(root)[0])
    };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = f(&mut tape, &bound)?;
    tape.backward(root)?;
    let mut out = Vec::with_capacity(params.len());
    for (k, (_, t)) in params.iter().enumerate() {
        let analytic = tape.grad(bound.vars()[k]).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec);
        let numeric = numeric_grad(t, h, |probe| {
            let mut q = params.clone();
            q.tensors_mut()[k] = probe.clone();
            eval(&q)
        })?;
        out.push(relative_error(&analytic, &numeric));
    }
    Ok(out)
}

#![allow(dead_code)]

use relnet_core::rng;
use relnet_core::{Result, Tape, Tensor, Var};

/// Uniform values in `[-2, 2]`.
pub fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng::stream(seed, 7);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect()).unwrap()
}

pub fn max_rel_error<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    relnet_core::gradcheck::max_rel_error(inputs, h, f).unwrap()
}

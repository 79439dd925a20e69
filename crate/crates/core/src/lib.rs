//! Latent relation inference for interacting systems.
//!
//! The crate is `no_std` + `alloc` so the numerics can be embedded anywhere;
//! the `std` feature only switches on runtime CPU detection inside the GEMM
//! kernels. File formats, the CLI and process-level orchestration live in the
//! `relnet` companion crate.
//!
//! Layout:
//!
//! * [`tensor`], [`tape`], [`optim`], [`params`]: dense tensors with
//!   reverse-mode autodiff and Adam.
//! * [`physics`]: 2-D spring/gravity simulator and dataset generation.
//! * [`encoder`], [`decoder`], [`model`]: the relation encoder (4-layer GRU
//!   over node pairs plus posterior/centrality heads) and the
//!   centrality-gated message passing decoder.
//! * [`losses`], [`schedule`], [`train`]: objective terms, window sampling,
//!   one-cycle schedule and the optimisation loop.
//! * [`analysis`]: k-means, silhouette, matched accuracy, PCA.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod decoder;
pub mod encoder;
mod error;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod losses;
pub(crate) mod math;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod physics;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

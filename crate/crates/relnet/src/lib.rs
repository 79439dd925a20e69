//! File formats, configuration and command implementations around
//! `relnet-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod jsonio;
pub mod num;
pub mod pipeline;

pub use error::{Error, Result};

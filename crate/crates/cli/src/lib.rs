//! Experiment harness and dataset I/O for the cloaking-attack pipeline.

pub mod error;
pub mod experiment;
pub mod io;

pub use error::{Error, Result};

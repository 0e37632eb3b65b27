//! Robust task clustering by low-rank matrix completion.
//!
//! The pipeline estimates cross-task transfer scores on a sample of task
//! pairs ([`transfer`]), keeps only confidently high or low scores as a
//! symmetric partially observed similarity matrix ([`filter`]), recovers
//! the full low-rank similarity matrix with a nuclear-norm plus l1 program
//! ([`completion`]) and partitions the tasks by spectral clustering
//! ([`spectral`]). The clusters then drive multi-task and few-shot
//! learning ([`learning`]). [`synth`] holds planted benchmarks for the
//! recovery step.

pub mod completion;
pub mod data;
pub mod error;
pub mod exec;
pub mod families;
pub mod filter;
pub mod io;
pub mod learning;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod spectral;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
pub use exec::Execution;

//! Simulation and analysis toolkit for gradient-communication scheduling in
//! data-parallel training.
//!
//! The pieces:
//! - [`model`]: cluster, model, fusion-plan and policy descriptors.
//! - [`cost`]: alpha-beta timing of ring reduce-scatter, all-gather and all-reduce.
//! - [`sched`]: per-policy task DAGs and a deterministic two-stream simulator.
//! - [`collective`]: ring collectives executed on real vectors, plus S-SGD.
//! - [`autotune`]: Gaussian-process Bayesian optimisation of the fusion buffer.
//! - [`analysis`]: closed-form speedup bounds, breakdowns and policy comparison.
//! - [`config`] and [`export`]: config ingestion and CSV / Chrome-trace output.

pub mod analysis;
pub mod autotune;
pub mod collective;
pub mod config;
pub mod cost;
pub mod error;
pub mod export;
pub mod model;
pub mod sched;

pub use error::{Error, Result};

//! Fusion-buffer autotuning: Gaussian-process regression over
//! (buffer size, throughput) observations, expected-improvement acquisition,
//! and random / grid search baselines.

mod acquisition;
mod gp;
mod search;

pub use acquisition::{ei_closed_form, expected_improvement, suggest_next, SUGGEST_GRID_POINTS};
pub use gp::{gp_fit, Bounds, GpHyperparams, GpPosterior, Observation};
pub use search::{
    grid_search, random_search, trials_to_within, tune, TrialRecord, TuneResult, TunerConfig,
};

/// Decimal megabyte.
pub const MB: f64 = 1e6;

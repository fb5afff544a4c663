use std::fmt::Display;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acquisition::suggest_next;
use super::gp::{gp_fit, Bounds, GpHyperparams, Observation};
use super::MB;
use crate::error::{Error, Result};

const MAX_CONSECUTIVE_FAILURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub lower_bytes: f64,
    pub upper_bytes: f64,
    pub xi: f64,
    pub init_buffer_bytes: f64,
    pub measure_steps: u32,
    pub max_trials: usize,
    pub seed: u64,
    pub hyper: GpHyperparams,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            lower_bytes: MB,
            upper_bytes: 100.0 * MB,
            xi: 0.1,
            init_buffer_bytes: 25.0 * MB,
            measure_steps: 10,
            max_trials: 20,
            seed: 0,
            hyper: GpHyperparams::default(),
        }
    }
}

impl TunerConfig {
    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.lower_bytes, self.upper_bytes)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bounds()?;
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "xi must be >= 0, got {}",
                self.xi
            )));
        }
        if !b.contains(self.init_buffer_bytes) {
            return Err(Error::InvalidArgument(format!(
                "init buffer {} outside bounds [{}, {}]",
                self.init_buffer_bytes, b.lower, b.upper
            )));
        }
        if self.measure_steps == 0 {
            return Err(Error::InvalidArgument("measure_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// 1-based.
    pub trial: usize,
    pub x_bytes: u64,
    /// `None` when the objective failed at this point.
    pub throughput: Option<f64>,
    pub cumulative_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_buffer: u64,
    pub best_throughput: f64,
    pub trace: Vec<TrialRecord>,
}

/// First trial whose running best is within `fraction` of `target`.
pub fn trials_to_within(trace: &[TrialRecord], target: f64, fraction: f64) -> Option<usize> {
    trace
        .iter()
        .find(|r| {
            r.cumulative_best
                .is_some_and(|b| b >= (1.0 - fraction) * target)
        })
        .map(|r| r.trial)
}

/// Shared bookkeeping for the three search strategies.
struct Session<F> {
    objective: F,
    steps: u32,
    observations: Vec<Observation>,
    trace: Vec<TrialRecord>,
    best: Option<(u64, f64)>,
    failures: usize,
}

impl<F, E> Session<F>
where
    F: FnMut(u64) -> std::result::Result<f64, E>,
    E: Display,
{
    fn new(objective: F, steps: u32) -> Self {
        Self {
            objective,
            steps,
            observations: Vec::new(),
            trace: Vec::new(),
            best: None,
            failures: 0,
        }
    }

    /// Averages `steps` objective calls at `x`; errors only once
    /// [`MAX_CONSECUTIVE_FAILURES`] evaluations in a row have failed.
    fn evaluate(&mut self, x: f64) -> Result<()> {
        let x_bytes = x.round().max(0.0) as u64;
        let mut sum = 0.0;
        let mut failure = None;
        for _ in 0..self.steps {
            match (self.objective)(x_bytes) {
                Ok(v) if v.is_finite() && v > 0.0 => sum += v,
                Ok(v) => {
                    failure = Some(format!("non-positive throughput {v} at {x_bytes} bytes"));
                    break;
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        let throughput = match failure {
            None => {
                let y = sum / f64::from(self.steps);
                self.failures = 0;
                self.observations.push(Observation {
                    buffer_bytes: x_bytes as f64,
                    throughput: y,
                    steps_averaged: self.steps,
                });
                if self.best.is_none_or(|(_, b)| y > b) {
                    self.best = Some((x_bytes, y));
                }
                Some(y)
            }
            Some(msg) => {
                log::warn!("objective failed at {x_bytes} bytes: {msg}");
                self.failures += 1;
                if self.failures >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::ObjectiveFailed {
                        consecutive: self.failures,
                        last: msg,
                    });
                }
                None
            }
        };
        self.trace.push(TrialRecord {
            trial: self.trace.len() + 1,
            x_bytes,
            throughput,
            cumulative_best: self.best.map(|(_, b)| b),
        });
        Ok(())
    }

    fn finish(self) -> Result<TuneResult> {
        let (best_buffer, best_throughput) = self.best.ok_or_else(|| Error::ObjectiveFailed {
            consecutive: self.failures,
            last: "no successful evaluation".into(),
        })?;
        Ok(TuneResult {
            best_buffer,
            best_throughput,
            trace: self.trace,
        })
    }
}

/// Bayesian optimisation of the buffer size: measure the initial buffer, then
/// repeatedly fit the GP, take the EI maximiser and measure it, for up to
/// `max_trials` suggestions after the initial point.
pub fn tune<F, E>(objective: F, config: &TunerConfig) -> Result<TuneResult>
where
    F: FnMut(u64) -> std::result::Result<f64, E>,
    E: Display,
{
    config.validate()?;
    let bounds = config.bounds()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut session = Session::new(objective, config.measure_steps);
    let mut x = config.init_buffer_bytes;
    for trial in 0..=config.max_trials {
        session.evaluate(x)?;
        if trial == config.max_trials {
            break;
        }
        x = if session.observations.is_empty() {
            rng.gen_range(bounds.lower..=bounds.upper)
        } else {
            let post = gp_fit(&session.observations, &config.hyper, bounds)?;
            bounds.clamp(suggest_next(&post, config))
        };
    }
    session.finish()
}

/// `max_trials` uniform samples from the bounds.
pub fn random_search<F, E>(objective: F, config: &TunerConfig) -> Result<TuneResult>
where
    F: FnMut(u64) -> std::result::Result<f64, E>,
    E: Display,
{
    config.validate()?;
    let bounds = config.bounds()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut session = Session::new(objective, config.measure_steps);
    for _ in 0..config.max_trials {
        session.evaluate(rng.gen_range(bounds.lower..=bounds.upper))?;
    }
    session.finish()
}

/// `max_trials` evenly spaced points over the bounds (the midpoint when only
/// one point is requested).
pub fn grid_search<F, E>(objective: F, config: &TunerConfig) -> Result<TuneResult>
where
    F: FnMut(u64) -> std::result::Result<f64, E>,
    E: Display,
{
    config.validate()?;
    let b = config.bounds()?;
    let n = config.max_trials;
    let mut session = Session::new(objective, config.measure_steps);
    for i in 0..n {
        let x = if n == 1 {
            0.5 * (b.lower + b.upper)
        } else {
            b.lower + (b.upper - b.lower) * i as f64 / (n - 1) as f64
        };
        session.evaluate(x)?;
    }
    session.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn quadratic(x: u64) -> std::result::Result<f64, Infallible> {
        let m = x as f64 / MB;
        Ok(5000.0 - (m - 35.0).powi(2))
    }

    #[test]
    fn constant_objective_found_at_first_trial() {
        let r = tune(|_| Ok::<_, Infallible>(42.0), &TunerConfig::default()).unwrap();
        assert_eq!(r.best_throughput, 42.0);
        assert_eq!(r.trace[0].cumulative_best, Some(42.0));
        assert_eq!(r.trace[0].x_bytes, 25_000_000);
    }

    #[test]
    fn quadratic_peak_found() {
        // Grid oracle at 1 MB resolution: the peak is 35 MB.
        let oracle = (1..=100)
            .map(|m| (m, quadratic(m * 1_000_000).unwrap()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(oracle.0, 35);
        let r = tune(quadratic, &TunerConfig::default()).unwrap();
        assert!(r.trace.len() <= 21);
        let best_mb = r.best_buffer as f64 / MB;
        assert!((best_mb - 35.0).abs() <= 3.5, "{best_mb}");
    }

    #[test]
    fn measure_steps_are_averaged() {
        let mut calls = 0u32;
        let cfg = TunerConfig {
            max_trials: 0,
            measure_steps: 4,
            ..TunerConfig::default()
        };
        let r = tune(
            |_| {
                calls += 1;
                Ok::<_, Infallible>(f64::from(calls))
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(r.best_throughput, 2.5);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn failures_are_skipped_then_abort() {
        let mut n = 0;
        let r = tune(
            |x| {
                n += 1;
                if n == 1 {
                    Err("boom")
                } else {
                    Ok(x as f64)
                }
            },
            &TunerConfig {
                max_trials: 3,
                measure_steps: 1,
                ..TunerConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.trace[0].throughput, None);
        assert!(r.trace[1].throughput.is_some());

        let err = tune(|_| Err::<f64, _>("down"), &TunerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ObjectiveFailed { consecutive: 3, .. }));
    }

    #[test]
    fn random_search_reproducible_and_bounded() {
        let cfg = TunerConfig {
            seed: 7,
            ..TunerConfig::default()
        };
        let a = random_search(quadratic, &cfg).unwrap();
        let b = random_search(quadratic, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a
            .trace
            .iter()
            .all(|t| (1_000_000..=100_000_000).contains(&t.x_bytes)));
    }

    #[test]
    fn grid_search_cases() {
        let one = TunerConfig {
            max_trials: 1,
            ..TunerConfig::default()
        };
        let r = grid_search(quadratic, &one).unwrap();
        assert_eq!(r.trace[0].x_bytes, 50_500_000);

        let mono = grid_search(|x| Ok::<_, Infallible>(x as f64), &TunerConfig::default()).unwrap();
        assert_eq!(mono.best_buffer, 100_000_000);

        let fine = TunerConfig {
            max_trials: 100,
            ..TunerConfig::default()
        };
        let r = grid_search(quadratic, &fine).unwrap();
        assert_eq!(r.best_buffer, 35_000_000);
    }

    #[test]
    fn trials_to_within_counts_from_one() {
        let r = grid_search(quadratic, &TunerConfig::default()).unwrap();
        assert_eq!(trials_to_within(&r.trace, 1e9, 0.0), None);
        assert_eq!(
            trials_to_within(&r.trace, r.trace[0].throughput.unwrap(), 0.0),
            Some(1)
        );
    }

    #[test]
    fn random_search_slower_than_bo_on_quadratic() {
        let peak = quadratic(35_000_000).unwrap();
        let median = |mut v: Vec<usize>| {
            v.sort_unstable();
            (v[4] + v[5]) as f64 / 2.0
        };
        let mut bo = Vec::new();
        let mut rs = Vec::new();
        for seed in 0..10 {
            let cfg = TunerConfig {
                seed,
                measure_steps: 1,
                ..TunerConfig::default()
            };
            let b = tune(quadratic, &cfg).unwrap();
            bo.push(trials_to_within(&b.trace, peak, 0.1).unwrap_or(b.trace.len() + 1));
            let r = random_search(quadratic, &cfg).unwrap();
            rs.push(trials_to_within(&r.trace, peak, 0.1).unwrap_or(r.trace.len() + 1));
        }
        assert!(
            median(rs.clone()) > median(bo.clone()),
            "random {rs:?} vs bo {bo:?}"
        );
    }

    #[test]
    fn config_validation() {
        let bad = TunerConfig {
            lower_bytes: 5.0,
            upper_bytes: 5.0,
            ..TunerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TunerConfig {
            xi: -0.1,
            ..TunerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

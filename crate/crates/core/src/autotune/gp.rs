use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "bounds need lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.lower) / (self.upper - self.lower)
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.lower + u * (self.upper - self.lower)
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub buffer_bytes: f64,
    pub throughput: f64,
    pub steps_averaged: u32,
}

/// Squared-exponential kernel settings in normalised coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self {
            lengthscale: 0.2,
            signal_variance: 1.0,
            noise_variance: 1e-6,
        }
    }
}

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Exact GP posterior. Inputs are scaled to [0, 1] over the bounds and
/// outputs are standardised, so the prior mean is the observation average.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub observations: Vec<Observation>,
    pub hyper: GpHyperparams,
    pub bounds: Bounds,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Diagonal jitter that made the kernel matrix factorisable.
    pub jitter: f64,
    xs: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

impl GpPosterior {
    fn kernel(&self, a: f64, b: f64) -> f64 {
        kernel(&self.hyper, a, b)
    }

    /// Mean and latent variance in standardised units at normalised `u`.
    pub fn predict_standardized(&self, u: f64) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|&xi| self.kernel(u, xi)));
        let mean = k.dot(&self.weights);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&k)
            .expect("cholesky factor is non-singular");
        let var = self.hyper.signal_variance - v.dot(&v);
        (mean, if var < 1e-12 { var.max(0.0) } else { var })
    }

    /// Mean and latent variance in throughput units at buffer size `x`.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let (m, v) = self.predict_standardized(self.bounds.normalize(x));
        (
            self.y_mean + self.y_scale * m,
            v * self.y_scale * self.y_scale,
        )
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn best_observed(&self) -> f64 {
        self.observations
            .iter()
            .map(|o| o.throughput)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn kernel(h: &GpHyperparams, a: f64, b: f64) -> f64 {
    let d = (a - b) / h.lengthscale;
    h.signal_variance * (-0.5 * d * d).exp()
}

pub fn gp_fit(
    observations: &[Observation],
    hyper: &GpHyperparams,
    bounds: Bounds,
) -> Result<GpPosterior> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument(
            "GP fit needs at least one observation".into(),
        ));
    }
    if !(hyper.lengthscale > 0.0 && hyper.signal_variance > 0.0 && hyper.noise_variance >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid GP hyperparameters {hyper:?}"
        )));
    }
    if hyper.noise_variance == 0.0 {
        for (i, a) in observations.iter().enumerate() {
            for b in &observations[..i] {
                if a.buffer_bytes == b.buffer_bytes && a.throughput != b.throughput {
                    return Err(Error::InconsistentObservations(a.buffer_bytes));
                }
            }
        }
    }

    let n = observations.len();
    let y_mean = observations.iter().map(|o| o.throughput).sum::<f64>() / n as f64;
    let var = observations
        .iter()
        .map(|o| (o.throughput - y_mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let xs: Vec<f64> = observations
        .iter()
        .map(|o| bounds.normalize(o.buffer_bytes))
        .collect();
    let ys = DVector::from_iterator(
        n,
        observations
            .iter()
            .map(|o| (o.throughput - y_mean) / y_scale),
    );

    let base = DMatrix::from_fn(n, n, |i, j| kernel(hyper, xs[i], xs[j]));
    for jitter in JITTER_LADDER {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += hyper.noise_variance + jitter;
        }
        if let Some(chol) = k.cholesky() {
            let weights = chol.solve(&ys);
            return Ok(GpPosterior {
                observations: observations.to_vec(),
                hyper: *hyper,
                bounds,
                y_mean,
                y_scale,
                jitter,
                xs,
                chol,
                weights,
            });
        }
    }
    Err(Error::InvalidArgument(
        "kernel matrix is not positive definite even with 1e-6 jitter".into(),
    ))
}

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::erfc;

use super::gp::GpPosterior;
use super::search::TunerConfig;

pub const SUGGEST_GRID_POINTS: usize = 512;
const REFINE_ITERS: usize = 60;

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Expected improvement for maximisation with exploration margin `xi`.
pub fn ei_closed_form(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = mu - best - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0)
}

/// EI at buffer size `x`, evaluated on the standardised scale and reported in
/// throughput units. `best_so_far` is in throughput units.
pub fn expected_improvement(posterior: &GpPosterior, x: f64, best_so_far: f64, xi: f64) -> f64 {
    let u = posterior.bounds.normalize(x);
    posterior.y_scale * ei_std(posterior, u, posterior.standardize(best_so_far), xi)
}

fn ei_std(posterior: &GpPosterior, u: f64, best_std: f64, xi: f64) -> f64 {
    let (m, v) = posterior.predict_standardized(u);
    ei_closed_form(m, v.sqrt(), best_std, xi)
}

/// Maximiser of EI over the bounds.
///
/// Scans an even grid of [`SUGGEST_GRID_POINTS`] points, breaking ties by
/// larger posterior variance and then smaller x, and polishes the winner with
/// a golden-section search between its grid neighbours. When EI vanishes
/// everywhere the highest-variance grid point is returned instead.
pub fn suggest_next(posterior: &GpPosterior, config: &TunerConfig) -> f64 {
    let best = posterior.standardize(posterior.best_observed());
    let xi = config.xi;
    let n = SUGGEST_GRID_POINTS;
    let grid: Vec<(f64, f64, f64)> = (0..n)
        .map(|i| {
            let u = i as f64 / (n - 1) as f64;
            let (m, v) = posterior.predict_standardized(u);
            (u, ei_closed_form(m, v.sqrt(), best, xi), v)
        })
        .collect();

    let mut pick = 0;
    for (i, cand) in grid.iter().enumerate().skip(1) {
        let cur = grid[pick];
        if cand.1 > cur.1 || (cand.1 == cur.1 && cand.2 > cur.2) {
            pick = i;
        }
    }

    if grid[pick].1 <= 0.0 {
        let mut by_var = 0;
        for (i, cand) in grid.iter().enumerate() {
            if cand.2 > grid[by_var].2 {
                by_var = i;
            }
        }
        return posterior.bounds.denormalize(grid[by_var].0);
    }

    let step = 1.0 / (n - 1) as f64;
    let lo = (grid[pick].0 - step).max(0.0);
    let hi = (grid[pick].0 + step).min(1.0);
    let refined = golden_max(|u| ei_std(posterior, u, best, xi), lo, hi);
    let u = if ei_std(posterior, refined, best, xi) > grid[pick].1 {
        refined
    } else {
        grid[pick].0
    };
    posterior.bounds.denormalize(u)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..REFINE_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

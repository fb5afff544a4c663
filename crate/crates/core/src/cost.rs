//! Alpha-beta timing of ring collectives.
//!
//! Message sizes are in bytes and may be fractional: `d / P` is real division
//! here, integer chunking only exists in [`crate::collective`]. Reduction
//! arithmetic is not charged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClusterSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Collective {
    ReduceScatter,
    AllGather,
    AllReduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveTiming {
    pub collective: Collective,
    pub message_bytes: f64,
    pub seconds: f64,
}

impl CollectiveTiming {
    pub fn of(collective: Collective, message_bytes: f64, cluster: &ClusterSpec) -> Self {
        let seconds = match collective {
            Collective::ReduceScatter => reduce_scatter_time(message_bytes, cluster),
            Collective::AllGather => all_gather_time(message_bytes, cluster),
            Collective::AllReduce => all_reduce_time(message_bytes, cluster),
        };
        Self {
            collective,
            message_bytes,
            seconds,
        }
    }
}

/// `(P-1)(alpha + (d/P) beta)`.
pub fn reduce_scatter_time(bytes: f64, c: &ClusterSpec) -> f64 {
    let p = c.workers as f64;
    (p - 1.0) * (c.alpha + bytes / p * c.beta)
}

/// Same cost as the reduce-scatter: P-1 rounds of one chunk each.
pub fn all_gather_time(bytes: f64, c: &ClusterSpec) -> f64 {
    let p = c.workers as f64;
    (p - 1.0) * (c.alpha + bytes / p * c.beta)
}

/// `2(P-1) alpha + 2(P-1)(d/P) beta`, evaluated as reduce-scatter plus
/// all-gather so the decomposition is exact in floating point.
pub fn all_reduce_time(bytes: f64, c: &ClusterSpec) -> f64 {
    reduce_scatter_time(bytes, c) + all_gather_time(bytes, c)
}

/// Pure startup cost of one all-reduce, `2(P-1) alpha`.
pub fn all_reduce_startup(c: &ClusterSpec) -> f64 {
    2.0 * (c.workers as f64 - 1.0) * c.alpha
}

/// All-reduce of `bytes` split into `n_parts` equal messages sent one after
/// another: each extra part pays one more startup.
pub fn partitioned_all_reduce_time(bytes: f64, n_parts: u64, c: &ClusterSpec) -> Result<f64> {
    if n_parts == 0 {
        return Err(Error::InvalidArgument("n_parts must be >= 1".into()));
    }
    Ok(all_reduce_time(bytes, c) + (n_parts - 1) as f64 * all_reduce_startup(c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub beta: f64,
    /// Set when the unconstrained fit went negative and was clamped to 0.
    pub clamped: bool,
}

/// Least-squares fit of `(alpha, beta)` to measured all-reduce times.
///
/// The all-reduce model is linear in `d`: `t = 2(P-1) alpha + 2(P-1)/P beta d`,
/// so this is a centred simple linear regression of `t` on `d`. With two
/// points it is the exact solve.
pub fn calibrate_alpha_beta(measurements: &[(f64, f64)], workers: usize) -> Result<Calibration> {
    if measurements.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 2 measurements, got {}",
            measurements.len()
        )));
    }
    if workers < 2 {
        return Err(Error::InvalidArgument(
            "calibration needs at least 2 workers".into(),
        ));
    }
    for &(d, t) in measurements {
        if !(d.is_finite() && d >= 0.0 && t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "measurement ({d}, {t}) must be finite and non-negative"
            )));
        }
    }
    let n = measurements.len() as f64;
    let d_mean = measurements.iter().map(|m| m.0).sum::<f64>() / n;
    let t_mean = measurements.iter().map(|m| m.1).sum::<f64>() / n;
    let (sxx, sxy) = measurements.iter().fold((0.0, 0.0), |(sxx, sxy), &(d, t)| {
        let dx = d - d_mean;
        (sxx + dx * dx, sxy + dx * (t - t_mean))
    });
    if sxx == 0.0 {
        return Err(Error::RankDeficient);
    }
    let slope = sxy / sxx;
    let intercept = t_mean - slope * d_mean;
    if !(slope.is_finite() && intercept.is_finite()) {
        return Err(Error::InvalidArgument(
            "calibration overflowed; rescale the measurements".into(),
        ));
    }

    let p = workers as f64;
    let mut alpha = intercept / (2.0 * (p - 1.0));
    let mut beta = slope * p / (2.0 * (p - 1.0));
    let mut clamped = false;
    if alpha < 0.0 {
        log::warn!("calibrated alpha {alpha} < 0, clamping to 0");
        alpha = 0.0;
        clamped = true;
    }
    if beta < 0.0 {
        log::warn!("calibrated beta {beta} < 0, clamping to 0");
        beta = 0.0;
        clamped = true;
    }
    Ok(Calibration {
        alpha,
        beta,
        clamped,
    })
}

/// The two 64-GPU 10GbE all-reduce measurements: 1 MB (2^20 bytes) in 4.5 ms
/// and 500 KB (5e5 bytes) in 3.9 ms.
pub const TEN_GBE_MEASUREMENTS: [(f64, f64); 2] = [(1_048_576.0, 4.5e-3), (500_000.0, 3.9e-3)];

/// 64-worker 10GbE cluster calibrated from [`TEN_GBE_MEASUREMENTS`].
pub fn calibrated_10gbe() -> ClusterSpec {
    let cal = calibrate_alpha_beta(&TEN_GBE_MEASUREMENTS, 64)
        .expect("reference measurements are well-posed");
    ClusterSpec {
        name: "10GbE-64".into(),
        workers: 64,
        alpha: cal.alpha,
        beta: cal.beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(p: usize, alpha: f64, beta: f64) -> ClusterSpec {
        ClusterSpec::new("t", p, alpha, beta).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn single_worker_costs_nothing() {
        let c = cluster(1, 1e-3, 1e-6);
        assert_eq!(reduce_scatter_time(12345.0, &c), 0.0);
        assert_eq!(all_gather_time(12345.0, &c), 0.0);
        assert_eq!(all_reduce_time(12345.0, &c), 0.0);
    }

    #[test]
    fn zero_bytes_is_pure_startup() {
        let c = cluster(64, 2.619e-5, 6.0952e-10);
        assert_eq!(reduce_scatter_time(0.0, &c), 63.0 * 2.619e-5);
    }

    #[test]
    fn reduce_scatter_at_one_mib() {
        let c = cluster(64, 2.619e-5, 6.0952e-10);
        // 63 * (2.619e-5 + 16384 * 6.0952e-10)
        let expected = 63.0 * (2.619e-5 + 16384.0 * 6.0952e-10);
        assert!(rel(reduce_scatter_time(1_048_576.0, &c), expected) < 1e-14);
        assert!(rel(expected, 2.279e-3) < 1e-3);
        assert_eq!(
            all_gather_time(1_048_576.0, &c),
            reduce_scatter_time(1_048_576.0, &c)
        );
    }

    #[test]
    fn calibrate_reference_points() {
        let cal = calibrate_alpha_beta(&TEN_GBE_MEASUREMENTS, 64).unwrap();
        // Exact 2x2 solve: 126 a + 1.96875 d b = t.
        let beta = (4.5e-3 - 3.9e-3) / (1.96875 * 548_576.0);
        let alpha = (4.5e-3 - 1.96875 * 1_048_576.0 * beta) / 126.0;
        assert!(rel(cal.alpha, alpha) < 1e-12);
        assert!(rel(cal.beta, beta) < 1e-12);
        assert!(rel(cal.alpha, 2.6612e-5) < 1e-4);
        assert!(rel(cal.beta, 5.5555e-10) < 1e-4);
        assert!(!cal.clamped);
    }

    #[test]
    fn all_reduce_matches_reported_measurements() {
        let c = calibrated_10gbe();
        assert!(rel(all_reduce_time(1_048_576.0, &c), 4.5e-3) < 1e-12);
        assert!(rel(all_reduce_time(500_000.0, &c), 3.9e-3) < 1e-12);
        // Decimal megabytes land within 2%.
        assert!(rel(all_reduce_time(1_000_000.0, &c), 4.5e-3) < 0.02);
    }

    #[test]
    fn partitioning_pays_extra_startups() {
        let c = calibrated_10gbe();
        assert_eq!(
            partitioned_all_reduce_time(1e6, 1, &c).unwrap(),
            all_reduce_time(1e6, &c)
        );
        let two = partitioned_all_reduce_time(1e6, 2, &c).unwrap();
        assert!(rel(two, 2.0 * all_reduce_time(5e5, &c)) < 1e-12);
        let mib = partitioned_all_reduce_time(1_048_576.0, 2, &c).unwrap();
        assert!(rel(mib, 4.5e-3 + 126.0 * c.alpha) < 1e-12);
        assert!(rel(mib, 7.853e-3) < 1e-3);
        assert!(two > 4.5e-3);
        assert!(partitioned_all_reduce_time(1e6, 0, &c).is_err());
    }

    #[test]
    fn calibration_errors() {
        assert!(calibrate_alpha_beta(&[(1.0, 1.0)], 4).is_err());
        assert!(matches!(
            calibrate_alpha_beta(&[(5.0, 1.0), (5.0, 2.0)], 4),
            Err(Error::RankDeficient)
        ));
        assert!(calibrate_alpha_beta(&[(1.0, 1.0), (2.0, 2.0)], 1).is_err());
        assert!(calibrate_alpha_beta(&[(1e308, 1.0), (0.0, 2.0), (1.7e308, 0.5)], 4).is_err());
    }

    #[test]
    fn calibration_clamps_negative_alpha() {
        // Steep line through the origin region with a negative intercept.
        let cal = calibrate_alpha_beta(&[(1000.0, 1e-3), (2000.0, 3e-3)], 8).unwrap();
        assert!(cal.clamped);
        assert_eq!(cal.alpha, 0.0);
        assert!(cal.beta > 0.0);
    }

    #[test]
    fn exact_model_round_trips() {
        let c = cluster(16, 3.3e-5, 8.1e-10);
        let pts: Vec<_> = [4096.0, 1e6]
            .iter()
            .map(|&d| (d, all_reduce_time(d, &c)))
            .collect();
        let cal = calibrate_alpha_beta(&pts, 16).unwrap();
        assert!(rel(cal.alpha, c.alpha) < 1e-12);
        assert!(rel(cal.beta, c.beta) < 1e-12);
    }

    #[test]
    fn timing_record() {
        let c = cluster(4, 1e-5, 1e-9);
        let t = CollectiveTiming::of(Collective::AllReduce, 4000.0, &c);
        assert_eq!(t.seconds, all_reduce_time(4000.0, &c));
    }
}

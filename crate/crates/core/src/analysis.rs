//! Closed-form speedup and iteration-time bounds, time breakdowns and policy
//! comparison tables.

use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{Error, Result};
use crate::model::{ClusterSpec, ModelSpec, PolicyKind, PolicySpec};
use crate::sched::{build_graph, simulate, TaskGraph, TaskKind, Timeline};

/// Upper bound on the P-worker speedup over one worker when reduce-scatter
/// can only hide behind backpropagation and all-gather behind feed-forward.
pub fn max_speedup(t_ff: f64, t_bp: f64, t_rs: f64, t_ag: f64, workers: usize) -> Result<f64> {
    for (name, v) in [
        ("t_ff", t_ff),
        ("t_bp", t_bp),
        ("t_rs", t_rs),
        ("t_ag", t_ag),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be >= 0, got {v}"
            )));
        }
    }
    if workers == 0 {
        return Err(Error::InvalidArgument("workers must be >= 1".into()));
    }
    let t_ar = t_rs + t_ag;
    let compute = t_ff + t_bp;
    let denom = compute + t_ar - t_rs.min(t_bp) - t_ag.min(t_ff);
    if denom <= 0.0 {
        return Err(Error::InvalidArgument(
            "speedup undefined: zero compute and zero communication".into(),
        ));
    }
    // When both communications hide completely the denominator is exactly the
    // compute time; skip the division so the bound is exactly P.
    if t_rs <= t_bp && t_ag <= t_ff {
        return Ok(workers as f64);
    }
    Ok(workers as f64 * compute / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalTimes {
    /// Reduce-scatter overlapped with backpropagation, all-gather with feed-forward.
    pub dear: f64,
    /// Whole all-reduce overlapped with backpropagation only.
    pub baseline: f64,
}

pub fn theoretical_times(t_ff: f64, t_bp: f64, t_rs: f64, t_ag: f64) -> TheoreticalTimes {
    TheoreticalTimes {
        dear: t_ff.max(t_ag) + t_bp.max(t_rs),
        baseline: t_ff + t_bp.max(t_rs + t_ag),
    }
}

/// Baseline minus decoupled time when `t_bp = 2 t_ff` and `t_rs = t_ag`.
pub fn theoretical_gap(t_ff: f64, t_ag: f64) -> f64 {
    let gap = if t_ag <= t_ff {
        0.0
    } else if t_ag <= 2.0 * t_ff {
        t_ag - t_ff
    } else {
        t_ff
    };
    debug_assert!({
        let t = theoretical_times(t_ff, 2.0 * t_ff, t_ag, t_ag);
        let scale = t.baseline.abs().max(f64::MIN_POSITIVE);
        ((t.baseline - t.dear) - gap).abs() <= 1e-12 * scale
    });
    gap
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub ff_seconds: f64,
    pub bp_seconds: f64,
    /// Iteration time not covered by computation.
    pub exposed_comm_seconds: f64,
    pub iteration_seconds: f64,
}

pub fn breakdown(timeline: &Timeline, model: &ModelSpec) -> Breakdown {
    let ff = model.total_ff();
    let bp = model.total_bp();
    let mut exposed = timeline.iteration_seconds - ff - bp;
    if exposed < 0.0 && exposed > -1e-12 * timeline.iteration_seconds.max(1.0) {
        exposed = 0.0;
    }
    Breakdown {
        ff_seconds: ff,
        bp_seconds: bp,
        exposed_comm_seconds: exposed,
        iteration_seconds: timeline.iteration_seconds,
    }
}

/// Total reduce-scatter and all-gather time in a graph. An all-reduce counts
/// half towards each, which is exact because the two halves are equal.
pub fn comm_components(graph: &TaskGraph) -> (f64, f64) {
    graph
        .tasks
        .iter()
        .fold((0.0, 0.0), |(rs, ag), t| match t.kind {
            TaskKind::Rs => (rs + t.duration, ag),
            TaskKind::Ag => (rs, ag + t.duration),
            TaskKind::Ar => (rs + 0.5 * t.duration, ag + 0.5 * t.duration),
            _ => (rs, ag),
        })
}

/// One row of a policy comparison.
///
/// `t_rs`, `t_ag` and `t_ar` are the costs of a single collective over the
/// whole model, the least communication any grouping can achieve, so `s_max`
/// depends on the model and cluster only. `comm_seconds` is what the policy
/// actually spends on the network, negotiation included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub policy: PolicyKind,
    pub buffer_bytes: Option<u64>,
    pub workers: usize,
    pub t_ff: f64,
    pub t_bp: f64,
    pub t_rs: f64,
    pub t_ag: f64,
    pub t_ar: f64,
    pub comm_seconds: f64,
    pub iteration_seconds: f64,
    pub s_max: f64,
    pub simulated_speedup: f64,
    pub ratio: f64,
}

pub fn speedup_report(
    graph: &TaskGraph,
    timeline: &Timeline,
    cluster: &ClusterSpec,
) -> Result<SpeedupReport> {
    let model = &graph.model;
    let bytes = model.total_bytes() as f64;
    let t_rs = cost::reduce_scatter_time(bytes, cluster);
    let t_ag = cost::all_gather_time(bytes, cluster);
    let (rs_sent, ag_sent) = comm_components(graph);
    let t_ff = model.total_ff();
    let t_bp = model.total_bp();
    let s_max = max_speedup(t_ff, t_bp, t_rs, t_ag, cluster.workers)?;
    let simulated_speedup =
        cluster.workers as f64 * model.total_compute() / timeline.iteration_seconds;
    Ok(SpeedupReport {
        policy: graph.policy.kind,
        buffer_bytes: graph
            .policy
            .fusion_buffer_bytes
            .filter(|_| graph.policy.kind.is_fused())
            .or(graph
                .policy
                .partition_bytes
                .filter(|_| graph.policy.kind == PolicyKind::PriorityPartition)),
        workers: cluster.workers,
        t_ff,
        t_bp,
        t_rs,
        t_ag,
        t_ar: t_rs + t_ag,
        comm_seconds: rs_sent + ag_sent + graph.total_duration(TaskKind::Negotiate),
        iteration_seconds: timeline.iteration_seconds,
        s_max,
        simulated_speedup,
        ratio: simulated_speedup / s_max,
    })
}

/// One report per policy, in input order. Speedup is measured against a
/// single worker running the same model with no communication.
pub fn compare_policies(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    policies: &[PolicySpec],
) -> Result<Vec<SpeedupReport>> {
    policies
        .iter()
        .map(|p| {
            let g = build_graph(model, p, cluster)?;
            let tl = simulate(&g)?;
            speedup_report(&g, &tl, cluster)
        })
        .collect()
}

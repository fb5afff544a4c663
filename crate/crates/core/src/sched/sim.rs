use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::graph::{build_graph, Resource, TaskGraph, TaskId};
use crate::error::{Error, Result};
use crate::model::{ClusterSpec, ModelSpec, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub task: TaskId,
    pub resource: Resource,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Sorted by start time, then task id.
    pub events: Vec<Event>,
    pub iteration_seconds: f64,
}

impl Timeline {
    pub fn event_of(&self, task: TaskId) -> Option<&Event> {
        self.events.iter().find(|e| e.task == task)
    }

    /// Busy time on `resource`.
    pub fn busy(&self, resource: Resource) -> f64 {
        self.events
            .iter()
            .filter(|e| e.resource == resource)
            .map(|e| e.end - e.start)
            .sum()
    }

    /// Checks durations, dependency order, resource exclusivity and the
    /// makespan against `graph`. Returns a description of the first violation.
    pub fn check(&self, graph: &TaskGraph) -> std::result::Result<(), String> {
        if self.events.len() != graph.tasks.len() {
            return Err(format!(
                "{} events for {} tasks",
                self.events.len(),
                graph.tasks.len()
            ));
        }
        let mut end_of = vec![f64::NAN; graph.tasks.len()];
        for e in &self.events {
            end_of[e.task] = e.end;
        }
        for e in &self.events {
            let task = graph.task(e.task);
            if e.end != e.start + task.duration {
                return Err(format!("{task}: event length differs from duration"));
            }
            if e.resource != task.resource {
                return Err(format!("{task}: scheduled on the wrong resource"));
            }
            for &d in &task.deps {
                if e.start < end_of[d] {
                    return Err(format!(
                        "{task} starts at {} before dependency {} ends at {}",
                        e.start,
                        graph.task(d),
                        end_of[d]
                    ));
                }
            }
        }
        for res in [Resource::Compute, Resource::Comm] {
            let mut on: Vec<_> = self
                .events
                .iter()
                .filter(|e| e.resource == res && e.end > e.start)
                .collect();
            on.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in on.windows(2) {
                if w[1].start < w[0].end {
                    return Err(format!(
                        "{} and {} overlap on {res:?}",
                        graph.task(w[0].task),
                        graph.task(w[1].task)
                    ));
                }
            }
        }
        let max_end = self.events.iter().map(|e| e.end).fold(0.0, f64::max);
        if max_end != self.iteration_seconds {
            return Err(format!(
                "iteration_seconds {} != max end {max_end}",
                self.iteration_seconds
            ));
        }
        Ok(())
    }
}

/// Kahn's algorithm; on a cycle, returns the ids that never became free.
fn check_acyclic(graph: &TaskGraph) -> Result<()> {
    let n = graph.tasks.len();
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<TaskId>> = vec![Vec::new(); n];
    for t in &graph.tasks {
        for &d in &t.deps {
            if d >= n {
                return Err(Error::InvalidArgument(format!(
                    "task {} depends on missing task {d}",
                    t.id
                )));
            }
            indeg[t.id] += 1;
            out[d].push(t.id);
        }
    }
    let mut queue: VecDeque<_> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop_front() {
        seen += 1;
        for &j in &out[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if seen == n {
        Ok(())
    } else {
        Err(Error::Cycle((0..n).filter(|&i| indeg[i] > 0).collect()))
    }
}

/// Deterministic list scheduling over one compute and one communication
/// stream. A task is ready once all its dependencies have finished; an idle
/// stream takes the ready task with the lowest `(issue_order, id)` and runs it
/// to completion.
pub fn simulate(graph: &TaskGraph) -> Result<Timeline> {
    check_acyclic(graph)?;
    let n = graph.tasks.len();
    let mut pending = vec![0usize; n];
    let mut dependents: Vec<Vec<TaskId>> = vec![Vec::new(); n];
    for t in &graph.tasks {
        pending[t.id] = t.deps.len();
        for &d in &t.deps {
            dependents[d].push(t.id);
        }
    }

    let slot = |r: Resource| match r {
        Resource::Compute => 0,
        Resource::Comm => 1,
        Resource::Delay => 2,
    };
    let mut ready: [BinaryHeap<Reverse<(u64, TaskId)>>; 3] = Default::default();
    let mut busy: [Option<(f64, TaskId)>; 2] = [None, None];
    let mut delayed: Vec<(f64, TaskId)> = Vec::new();
    let mut events = Vec::with_capacity(n);

    for t in &graph.tasks {
        if pending[t.id] == 0 {
            ready[slot(t.resource)].push(Reverse((t.issue_order, t.id)));
        }
    }

    let mut now = 0.0_f64;
    loop {
        for r in [Resource::Compute, Resource::Comm] {
            let s = slot(r);
            if busy[s].is_none() {
                if let Some(Reverse((_, id))) = ready[s].pop() {
                    let end = now + graph.tasks[id].duration;
                    busy[s] = Some((end, id));
                    events.push(Event {
                        task: id,
                        resource: r,
                        start: now,
                        end,
                    });
                }
            }
        }
        while let Some(Reverse((_, id))) = ready[2].pop() {
            let end = now + graph.tasks[id].duration;
            delayed.push((end, id));
            events.push(Event {
                task: id,
                resource: Resource::Delay,
                start: now,
                end,
            });
        }

        let next = busy
            .iter()
            .flatten()
            .chain(delayed.iter())
            .map(|&(end, _)| end)
            .min_by(f64::total_cmp);
        let Some(next) = next else { break };
        now = next;

        let mut done: Vec<TaskId> = Vec::new();
        for b in &mut busy {
            if let Some((end, id)) = *b {
                if end <= now {
                    done.push(id);
                    *b = None;
                }
            }
        }
        delayed.retain(|&(end, id)| {
            if end <= now {
                done.push(id);
                false
            } else {
                true
            }
        });
        done.sort_unstable();
        for id in done {
            for &j in &dependents[id] {
                pending[j] -= 1;
                if pending[j] == 0 {
                    let t = &graph.tasks[j];
                    ready[slot(t.resource)].push(Reverse((t.issue_order, j)));
                }
            }
        }
    }

    debug_assert_eq!(events.len(), n, "acyclic graphs always drain");
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.task.cmp(&b.task)));
    let iteration_seconds = events.iter().map(|e| e.end).fold(0.0, f64::max);
    Ok(Timeline {
        events,
        iteration_seconds,
    })
}

pub fn iteration_time(
    model: &ModelSpec,
    policy: &PolicySpec,
    cluster: &ClusterSpec,
) -> Result<f64> {
    Ok(simulate(&build_graph(model, policy, cluster)?)?.iteration_seconds)
}

/// Samples per second for one simulated iteration.
pub fn throughput(
    model: &ModelSpec,
    policy: &PolicySpec,
    cluster: &ClusterSpec,
    samples_per_iteration: f64,
) -> Result<f64> {
    if !(samples_per_iteration.is_finite() && samples_per_iteration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "samples_per_iteration must be > 0, got {samples_per_iteration}"
        )));
    }
    let t = iteration_time(model, policy, cluster)?;
    if t <= 0.0 {
        return Err(Error::InvalidArgument(
            "iteration time is zero; throughput undefined".into(),
        ));
    }
    Ok(samples_per_iteration / t)
}

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{Error, Result};
use crate::model::{
    build_fusion_plan, ClusterSpec, FusionPlan, LayerGroup, ModelSpec, NegotiationPlacement,
    Op1Sync, PolicyKind, PolicySpec,
};

pub type TaskId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Ff,
    Bp,
    Rs,
    Ag,
    Ar,
    Negotiate,
    Barrier,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Ff => "FF",
            TaskKind::Bp => "BP",
            TaskKind::Rs => "RS",
            TaskKind::Ag => "AG",
            TaskKind::Ar => "AR",
            TaskKind::Negotiate => "NEG",
            TaskKind::Barrier => "BARRIER",
        }
    }

    pub fn is_compute(&self) -> bool {
        matches!(self, TaskKind::Ff | TaskKind::Bp)
    }
}

/// What a task operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subject {
    Layer(usize),
    /// Position in the fusion plan plus the layers it covers.
    Group {
        index: usize,
        layers: LayerGroup,
    },
    /// Part `part` (0-based) of `parts` of one layer's tensor.
    Part {
        layer: usize,
        part: usize,
        parts: usize,
    },
    /// Synchronisation point over every group.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    Compute,
    Comm,
    /// Unbounded: tasks start as soon as they are ready and never contend.
    Delay,
}

impl Resource {
    pub fn is_exclusive(&self) -> bool {
        !matches!(self, Resource::Delay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub subject: Subject,
    pub duration: f64,
    pub deps: Vec<TaskId>,
    pub resource: Resource,
    /// Rank among tasks that are ready at the same instant on the same
    /// resource; lower goes first, ties broken by id.
    pub issue_order: u64,
    /// Message size for communication tasks, 0 otherwise.
    pub bytes: f64,
}

impl Task {
    pub fn label(&self) -> String {
        let kind = self.kind.as_str();
        match self.subject {
            Subject::Layer(l) => format!("{kind} {l}"),
            Subject::Group { index, .. } => format!("{kind} g{index}"),
            Subject::Part { layer, part, parts } => format!("{kind} {layer}.{}/{parts}", part + 1),
            Subject::All => kind.to_string(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Compute and communication tasks of one steady-state iteration: the
/// backward pass of iteration i, its gradient communication, and the forward
/// pass of iteration i+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    pub policy: PolicySpec,
    pub model: ModelSpec,
    pub plan: Option<FusionPlan>,
}

impl TaskGraph {
    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id]
    }

    pub fn tasks_of(&self, kind: TaskKind) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(move |t| t.kind == kind)
    }

    pub fn total_duration(&self, kind: TaskKind) -> f64 {
        self.tasks_of(kind).map(|t| t.duration).sum()
    }

    /// Copy with every duration replaced by `f(task)`.
    pub fn map_durations(&self, mut f: impl FnMut(&Task) -> f64) -> TaskGraph {
        let mut g = self.clone();
        for t in &mut g.tasks {
            t.duration = f(&self.tasks[t.id]);
        }
        g
    }

    /// Copy with every task of `kind` taking zero time.
    pub fn zero_kind(&self, kind: TaskKind) -> TaskGraph {
        self.map_durations(|t| if t.kind == kind { 0.0 } else { t.duration })
    }
}

struct Builder {
    tasks: Vec<Task>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        kind: TaskKind,
        subject: Subject,
        duration: f64,
        deps: Vec<TaskId>,
        resource: Resource,
        issue_order: u64,
        bytes: f64,
    ) -> TaskId {
        let id = self.tasks.len();
        self.tasks.push(Task {
            id,
            kind,
            subject,
            duration,
            deps,
            resource,
            issue_order,
            bytes,
        });
        id
    }
}

/// Builds the task DAG for `model` under `policy`, with communication
/// durations from the alpha-beta model on `cluster`.
pub fn build_graph(
    model: &ModelSpec,
    policy: &PolicySpec,
    cluster: &ClusterSpec,
) -> Result<TaskGraph> {
    model.validate()?;
    cluster.validate()?;
    policy.validate()?;
    let plan = if policy.kind.is_fused() {
        Some(build_fusion_plan(
            model,
            policy.fusion_buffer_bytes.expect("validated"),
        )?)
    } else {
        None
    };
    build_graph_with_plan(model, policy, cluster, plan)
}

/// Like [`build_graph`] but with a caller-supplied plan for the fused kinds.
pub fn build_graph_with_plan(
    model: &ModelSpec,
    policy: &PolicySpec,
    cluster: &ClusterSpec,
    plan: Option<FusionPlan>,
) -> Result<TaskGraph> {
    model.validate()?;
    cluster.validate()?;
    let l_count = model.num_layers();
    if let Some(p) = &plan {
        p.validate(l_count)?;
    }
    if policy.kind.is_fused() && plan.is_none() {
        return Err(Error::InvalidPolicy(format!(
            "{} requires a fusion plan or fusion_buffer_bytes",
            policy.kind
        )));
    }
    if policy.kind == PolicyKind::PriorityPartition {
        policy.validate()?;
    }

    let mut b = Builder { tasks: Vec::new() };
    let last = l_count as u64;

    // Backward chain BP_L -> ... -> BP_1. bp[l] is the id of BP for layer l.
    let mut bp = vec![usize::MAX; l_count + 1];
    for l in (1..=l_count).rev() {
        let deps = if l == l_count {
            vec![]
        } else {
            vec![bp[l + 1]]
        };
        bp[l] = b.push(
            TaskKind::Bp,
            Subject::Layer(l),
            model.layer(l).t_bp,
            deps,
            Resource::Compute,
            last - l as u64,
            0.0,
        );
    }

    // gate[l]: communication tasks FF_l must wait for.
    let mut gate: Vec<Vec<TaskId>> = vec![Vec::new(); l_count + 1];

    match policy.kind {
        PolicyKind::Wfbp => {
            for l in (1..=l_count).rev() {
                let bytes = model.layer(l).bytes() as f64;
                let ar = b.push(
                    TaskKind::Ar,
                    Subject::Layer(l),
                    cost::all_reduce_time(bytes, cluster),
                    vec![bp[l]],
                    Resource::Comm,
                    last - l as u64,
                    bytes,
                );
                gate[l].push(ar);
            }
        }
        PolicyKind::WfbpFused => {
            let plan = plan.as_ref().expect("checked above");
            for (gi, g) in plan.groups.iter().enumerate() {
                let bytes = model.range_bytes(*g) as f64;
                let ar = b.push(
                    TaskKind::Ar,
                    Subject::Group {
                        index: gi,
                        layers: *g,
                    },
                    cost::all_reduce_time(bytes, cluster),
                    g.layers_desc().map(|l| bp[l]).collect(),
                    Resource::Comm,
                    gi as u64,
                    bytes,
                );
                for l in g.layers_desc() {
                    gate[l].push(ar);
                }
            }
        }
        PolicyKind::PriorityPartition => {
            let part_cap = policy.partition_bytes.expect("validated");
            let negotiation =
                f64::from(policy.negotiation_rounds) * cost::all_reduce_startup(cluster);
            let neg_resource = match policy.negotiation {
                NegotiationPlacement::Serialized => Resource::Comm,
                NegotiationPlacement::FreeFloating => Resource::Delay,
            };
            for l in (1..=l_count).rev() {
                let size = model.layer(l).bytes();
                let parts = size.div_ceil(part_cap).max(1);
                let part_bytes = size as f64 / parts as f64;
                let part_time = cost::all_reduce_time(part_bytes, cluster);
                for k in 0..parts as usize {
                    let subject = Subject::Part {
                        layer: l,
                        part: k,
                        parts: parts as usize,
                    };
                    // Ascending layer index first: earliest-needed-by-FF wins.
                    let order = ((l as u64) << 32) | ((k as u64) << 1);
                    let neg = b.push(
                        TaskKind::Negotiate,
                        subject,
                        negotiation,
                        vec![bp[l]],
                        neg_resource,
                        order,
                        0.0,
                    );
                    let ar = b.push(
                        TaskKind::Ar,
                        subject,
                        part_time,
                        vec![neg],
                        Resource::Comm,
                        order | 1,
                        part_bytes,
                    );
                    gate[l].push(ar);
                }
            }
        }
        PolicyKind::Dear | PolicyKind::DearFused => {
            let plan = plan.unwrap_or_else(|| FusionPlan::per_layer(model));
            let fused = policy.kind == PolicyKind::DearFused;
            let groups = plan.groups.len() as u64;
            let subject = |gi: usize, g: LayerGroup| {
                if fused {
                    Subject::Group {
                        index: gi,
                        layers: g,
                    }
                } else {
                    Subject::Layer(g.first)
                }
            };
            let mut rs = Vec::with_capacity(plan.groups.len());
            for (gi, g) in plan.groups.iter().enumerate() {
                let bytes = model.range_bytes(*g) as f64;
                rs.push(b.push(
                    TaskKind::Rs,
                    subject(gi, *g),
                    cost::reduce_scatter_time(bytes, cluster),
                    g.layers_desc().map(|l| bp[l]).collect(),
                    Resource::Comm,
                    gi as u64,
                    bytes,
                ));
            }
            let barrier = match policy.op1_sync {
                Op1Sync::Barrier => Some(b.push(
                    TaskKind::Barrier,
                    Subject::All,
                    0.0,
                    rs.clone(),
                    Resource::Comm,
                    groups,
                    0.0,
                )),
                Op1Sync::PerGroup => None,
            };
            // All-gathers follow feed-forward order: lowest layers first.
            for (gi, g) in plan.groups.iter().enumerate().rev() {
                let bytes = model.range_bytes(*g) as f64;
                let dep = barrier.unwrap_or(rs[gi]);
                let ag = b.push(
                    TaskKind::Ag,
                    subject(gi, *g),
                    cost::all_gather_time(bytes, cluster),
                    vec![dep],
                    Resource::Comm,
                    groups + 1 + (groups - 1 - gi as u64),
                    bytes,
                );
                for l in g.layers_desc() {
                    gate[l].push(ag);
                }
            }
            return Ok(finish(b, gate, model, policy, fused.then_some(plan)));
        }
    }

    Ok(finish(b, gate, model, policy, plan))
}

fn finish(
    mut b: Builder,
    gate: Vec<Vec<TaskId>>,
    model: &ModelSpec,
    policy: &PolicySpec,
    plan: Option<FusionPlan>,
) -> TaskGraph {
    let l_count = model.num_layers();
    let mut prev_ff: Option<TaskId> = None;
    #[allow(clippy::needless_range_loop)]
    for l in 1..=l_count {
        let mut deps = gate[l].clone();
        deps.extend(prev_ff);
        prev_ff = Some(b.push(
            TaskKind::Ff,
            Subject::Layer(l),
            model.layer(l).t_ff,
            deps,
            Resource::Compute,
            (l_count + l - 1) as u64,
            0.0,
        ));
    }
    TaskGraph {
        tasks: b.tasks,
        policy: policy.clone(),
        model: model.clone(),
        plan,
    }
}

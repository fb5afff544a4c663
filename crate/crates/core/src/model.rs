//! Cluster, model, fusion-plan and policy descriptors shared by every other module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BYTES_PER_ELEMENT: u32 = 4;

/// Worker count plus the alpha-beta link parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub name: String,
    pub workers: usize,
    /// Per-message startup latency in seconds.
    pub alpha: f64,
    /// Transfer time per byte in seconds.
    pub beta: f64,
}

impl ClusterSpec {
    pub fn new(name: impl Into<String>, workers: usize, alpha: f64, beta: f64) -> Result<Self> {
        let cluster = Self {
            name: name.into(),
            workers,
            alpha,
            beta,
        };
        cluster.validate()?;
        Ok(cluster)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidCluster("workers must be >= 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidCluster(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidCluster(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Link bandwidth in bytes per second, `None` when beta is zero.
    pub fn bandwidth(&self) -> Option<f64> {
        (self.beta > 0.0).then(|| 1.0 / self.beta)
    }

    /// Same link, different worker count.
    pub fn with_workers(&self, workers: usize) -> Self {
        Self {
            workers,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based; 1 is the input-side layer.
    pub index: usize,
    pub param_count: u64,
    pub bytes_per_element: u32,
    pub t_ff: f64,
    pub t_bp: f64,
}

impl LayerSpec {
    pub fn new(index: usize, param_count: u64, t_ff: f64, t_bp: f64) -> Self {
        Self {
            index,
            param_count,
            bytes_per_element: DEFAULT_BYTES_PER_ELEMENT,
            t_ff,
            t_bp,
        }
    }

    pub fn bytes(&self) -> u64 {
        self.param_count * u64::from(self.bytes_per_element)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let model = Self {
            name: name.into(),
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// `n` identical layers.
    pub fn uniform(
        name: impl Into<String>,
        n: usize,
        param_count: u64,
        t_ff: f64,
        t_bp: f64,
    ) -> Result<Self> {
        let layers = (1..=n)
            .map(|i| LayerSpec::new(i, param_count, t_ff, t_bp))
            .collect();
        Self::new(name, layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptyModel);
        }
        for (pos, layer) in self.layers.iter().enumerate() {
            if layer.index != pos + 1 {
                return Err(Error::InvalidModel(format!(
                    "layer at position {} has index {}; indices must be exactly 1..L in order",
                    pos + 1,
                    layer.index
                )));
            }
            if layer.bytes_per_element == 0 {
                return Err(Error::InvalidModel(format!(
                    "layer {} has zero bytes_per_element",
                    layer.index
                )));
            }
            for (what, v) in [("t_ff", layer.t_ff), ("t_bp", layer.t_bp)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "layer {} has invalid {what} = {v}",
                        layer.index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer by 1-based index.
    pub fn layer(&self, index: usize) -> &LayerSpec {
        &self.layers[index - 1]
    }

    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.param_count).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.layers.iter().map(LayerSpec::bytes).sum()
    }

    pub fn total_ff(&self) -> f64 {
        self.layers.iter().map(|l| l.t_ff).sum()
    }

    pub fn total_bp(&self) -> f64 {
        self.layers.iter().map(|l| l.t_bp).sum()
    }

    pub fn total_compute(&self) -> f64 {
        self.total_ff() + self.total_bp()
    }

    /// Bytes of the inclusive layer range.
    pub fn range_bytes(&self, group: LayerGroup) -> u64 {
        (group.first..=group.last)
            .map(|i| self.layer(i).bytes())
            .sum()
    }
}

/// Inclusive range of layer indices, `first <= last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerGroup {
    pub first: usize,
    pub last: usize,
}

impl LayerGroup {
    pub fn new(first: usize, last: usize) -> Self {
        debug_assert!(first <= last);
        Self { first, last }
    }

    pub fn single(index: usize) -> Self {
        Self::new(index, index)
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.first..=self.last).contains(&index)
    }

    /// Layers from last to first, i.e. gradient-ready order.
    pub fn layers_desc(&self) -> impl Iterator<Item = usize> {
        (self.first..=self.last).rev()
    }
}

impl fmt::Display for LayerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.first == self.last {
            write!(f, "{{{}}}", self.first)
        } else {
            write!(f, "{{{}..{}}}", self.last, self.first)
        }
    }
}

/// Partition of the layers into contiguous communication groups, ordered from
/// the last layer down to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub groups: Vec<LayerGroup>,
    /// Threshold that produced the plan; 0 when hand-built.
    pub buffer_bytes: u64,
}

impl FusionPlan {
    /// One group per layer.
    pub fn per_layer(model: &ModelSpec) -> Self {
        Self {
            groups: (1..=model.num_layers())
                .rev()
                .map(LayerGroup::single)
                .collect(),
            buffer_bytes: 0,
        }
    }

    pub fn from_groups(groups: Vec<LayerGroup>, num_layers: usize) -> Result<Self> {
        let plan = Self {
            groups,
            buffer_bytes: 0,
        };
        plan.validate(num_layers)?;
        Ok(plan)
    }

    /// Checks that the groups tile `1..=num_layers` in descending order.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        let mut expected_last = num_layers;
        for g in &self.groups {
            if g.first > g.last || g.last != expected_last || g.first == 0 {
                return Err(Error::InvalidArgument(format!(
                    "fusion plan group {g} does not continue the descending partition at layer {expected_last}"
                )));
            }
            expected_last = g.first - 1;
        }
        if expected_last != 0 {
            return Err(Error::InvalidArgument(format!(
                "fusion plan leaves layers 1..={expected_last} uncovered"
            )));
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Position in `groups` of the group holding `layer`.
    pub fn group_of(&self, layer: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(layer))
    }
}

/// Greedy fusion from the last layer downwards: keep adding layers to the
/// open group while the group stays within `buffer_bytes`.
pub fn build_fusion_plan(model: &ModelSpec, buffer_bytes: u64) -> Result<FusionPlan> {
    if model.layers.is_empty() {
        return Err(Error::EmptyModel);
    }
    if buffer_bytes == 0 {
        return Err(Error::InvalidArgument("buffer_bytes must be > 0".into()));
    }
    let mut groups = Vec::new();
    let mut open: Option<(usize, usize, u64)> = None; // (first, last, bytes)
    for layer in model.layers.iter().rev() {
        let b = layer.bytes();
        open = match open {
            Some((_, last, acc)) if acc.saturating_add(b) <= buffer_bytes => {
                Some((layer.index, last, acc + b))
            }
            Some((first, last, _)) => {
                groups.push(LayerGroup::new(first, last));
                Some((layer.index, layer.index, b))
            }
            None => Some((layer.index, layer.index, b)),
        };
    }
    if let Some((first, last, _)) = open {
        groups.push(LayerGroup::new(first, last));
    }
    Ok(FusionPlan {
        groups,
        buffer_bytes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyKind {
    Wfbp,
    WfbpFused,
    PriorityPartition,
    Dear,
    DearFused,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Wfbp,
        PolicyKind::WfbpFused,
        PolicyKind::PriorityPartition,
        PolicyKind::Dear,
        PolicyKind::DearFused,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Wfbp => "WFBP",
            PolicyKind::WfbpFused => "WFBP_FUSED",
            PolicyKind::PriorityPartition => "PRIORITY_PARTITION",
            PolicyKind::Dear => "DEAR",
            PolicyKind::DearFused => "DEAR_FUSED",
        }
    }

    pub fn is_fused(&self) -> bool {
        matches!(self, PolicyKind::WfbpFused | PolicyKind::DearFused)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| {
                Error::InvalidPolicy(format!(
                    "unknown policy kind `{s}`; expected one of WFBP, WFBP_FUSED, PRIORITY_PARTITION, DEAR, DEAR_FUSED"
                ))
            })
    }
}

/// Where negotiation latency is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegotiationPlacement {
    /// Occupies the communication stream.
    #[default]
    Serialized,
    /// Pure delay that occupies no resource.
    FreeFloating,
}

/// How all-gathers wait on reduce-scatters in the decoupled policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op1Sync {
    /// Every all-gather waits for all reduce-scatters.
    #[default]
    Barrier,
    /// Each group's all-gather waits only for its own reduce-scatter.
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub fusion_buffer_bytes: Option<u64>,
    pub partition_bytes: Option<u64>,
    pub negotiation_rounds: u32,
    pub negotiation: NegotiationPlacement,
    pub op1_sync: Op1Sync,
}

impl PolicySpec {
    fn plain(kind: PolicyKind) -> Self {
        Self {
            kind,
            fusion_buffer_bytes: None,
            partition_bytes: None,
            negotiation_rounds: 1,
            negotiation: NegotiationPlacement::Serialized,
            op1_sync: Op1Sync::Barrier,
        }
    }

    pub fn wfbp() -> Self {
        Self::plain(PolicyKind::Wfbp)
    }

    pub fn wfbp_fused(buffer_bytes: u64) -> Self {
        Self {
            fusion_buffer_bytes: Some(buffer_bytes),
            ..Self::plain(PolicyKind::WfbpFused)
        }
    }

    pub fn priority_partition(partition_bytes: u64, negotiation_rounds: u32) -> Self {
        Self {
            partition_bytes: Some(partition_bytes),
            negotiation_rounds,
            ..Self::plain(PolicyKind::PriorityPartition)
        }
    }

    pub fn dear() -> Self {
        Self::plain(PolicyKind::Dear)
    }

    pub fn dear_fused(buffer_bytes: u64) -> Self {
        Self {
            fusion_buffer_bytes: Some(buffer_bytes),
            ..Self::plain(PolicyKind::DearFused)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_fused() && !matches!(self.fusion_buffer_bytes, Some(b) if b > 0) {
            return Err(Error::InvalidPolicy(format!(
                "{} requires fusion_buffer_bytes > 0",
                self.kind
            )));
        }
        if self.kind == PolicyKind::PriorityPartition
            && !matches!(self.partition_bytes, Some(b) if b > 0)
        {
            return Err(Error::InvalidPolicy(
                "PRIORITY_PARTITION requires partition_bytes > 0".into(),
            ));
        }
        Ok(())
    }
}

/// How preset parameters are spread over the tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamProfile {
    #[default]
    Uniform,
    /// 80% of the parameters in the last 20% of the tensors.
    Imbalanced,
}

impl FromStr for ParamProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(ParamProfile::Uniform),
            "imbalanced" => Ok(ParamProfile::Imbalanced),
            other => Err(Error::InvalidArgument(format!(
                "unknown parameter profile `{other}`; expected uniform or imbalanced"
            ))),
        }
    }
}

/// Benchmark models: learnable layers, parameter tensors, parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub learnable_layers: usize,
    pub tensors: usize,
    pub params: u64,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "resnet50",
        learnable_layers: 107,
        tensors: 161,
        params: 25_600_000,
    },
    Preset {
        name: "densenet201",
        learnable_layers: 402,
        tensors: 604,
        params: 20_000_000,
    },
    Preset {
        name: "inceptionv4",
        learnable_layers: 299,
        tensors: 449,
        params: 42_700_000,
    },
    Preset {
        name: "bert_base",
        learnable_layers: 105,
        tensors: 206,
        params: 110_100_000,
    },
    Preset {
        name: "bert_large",
        learnable_layers: 201,
        tensors: 398,
        params: 336_200_000,
    },
];

pub fn find_preset(name: &str) -> Result<Preset> {
    let norm = name.trim().to_ascii_lowercase().replace('-', "_");
    PRESETS
        .iter()
        .copied()
        .find(|p| p.name == norm)
        .ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            valid: PRESETS
                .iter()
                .map(|p| p.name)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

/// Spreads `total` over `n` slots, remainder going to the lowest slots.
fn spread(total: u64, n: usize) -> impl Iterator<Item = u64> {
    let n64 = n as u64;
    let (base, rem) = if n == 0 {
        (0, 0)
    } else {
        (total / n64, total % n64)
    };
    (0..n64).map(move |i| base + u64::from(i < rem))
}

/// Synthetic model with the preset's tensor count and parameter total.
///
/// Feed-forward time is split evenly across tensors and each layer's
/// backpropagation time is `bp_to_ff_ratio` times its feed-forward time.
pub fn preset_model(
    name: &str,
    total_ff_seconds: f64,
    bp_to_ff_ratio: f64,
    profile: ParamProfile,
) -> Result<ModelSpec> {
    let preset = find_preset(name)?;
    if !(total_ff_seconds.is_finite() && total_ff_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "total_ff_seconds must be > 0, got {total_ff_seconds}"
        )));
    }
    if !(bp_to_ff_ratio.is_finite() && bp_to_ff_ratio > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bp_to_ff_ratio must be > 0, got {bp_to_ff_ratio}"
        )));
    }
    let n = preset.tensors;
    let params: Vec<u64> = match profile {
        ParamProfile::Uniform => spread(preset.params, n).collect(),
        ParamProfile::Imbalanced => {
            let head = n.div_ceil(5);
            let head_params = preset.params / 5 * 4 + (preset.params % 5) * 4 / 5;
            spread(preset.params - head_params, n - head)
                .chain(spread(head_params, head))
                .collect()
        }
    };
    let t_ff = total_ff_seconds / n as f64;
    let layers = params
        .into_iter()
        .enumerate()
        .map(|(i, p)| LayerSpec::new(i + 1, p, t_ff, bp_to_ff_ratio * t_ff))
        .collect();
    ModelSpec::new(preset.name, layers)
}

//! Experiment configuration: one JSON document with optional `cluster`,
//! `model`, `policy` and `tuner` sections. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "cluster": { "workers": 64, "alpha": 2.6612e-5, "beta": 5.5555e-10 },
//!   "model":   { "preset": "resnet50", "total_ff_seconds": 0.05, "profile": "imbalanced" },
//!   "policy":  { "kind": "DEAR_FUSED", "fusion_buffer_bytes": 25000000 },
//!   "tuner":   { "max_trials": 20, "seed": 1 }
//! }
//! ```

use serde::{Deserialize, Serialize};

use crate::autotune::TunerConfig;
use crate::error::{Error, Result};
use crate::model::{
    preset_model, ClusterSpec, LayerSpec, ModelSpec, NegotiationPlacement, Op1Sync, ParamProfile,
    PolicyKind, PolicySpec, DEFAULT_BYTES_PER_ELEMENT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    #[serde(default)]
    pub name: Option<String>,
    pub workers: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub param_count: u64,
    pub t_ff: f64,
    pub t_bp: f64,
    #[serde(default)]
    pub bytes_per_element: Option<u32>,
}

/// Either a preset (`preset` + `total_ff_seconds`) or an explicit `layers` list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub total_ff_seconds: Option<f64>,
    pub bp_to_ff_ratio: Option<f64>,
    pub profile: Option<ParamProfile>,
    pub layers: Option<Vec<LayerEntry>>,
    /// Global batch per iteration, used for throughput.
    pub samples_per_iteration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    #[serde(default)]
    pub fusion_buffer_bytes: Option<u64>,
    #[serde(default)]
    pub partition_bytes: Option<u64>,
    #[serde(default)]
    pub negotiation_rounds: Option<u32>,
    #[serde(default)]
    pub negotiation: Option<NegotiationPlacement>,
    #[serde(default)]
    pub op1_sync: Option<Op1Sync>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub cluster: Option<ClusterSection>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub policy: Option<PolicySection>,
    #[serde(default)]
    pub tuner: Option<TunerConfig>,
}

fn missing(section: &str) -> Error {
    Error::Config(format!("missing section `{section}`"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn cluster(&self) -> Result<ClusterSpec> {
        let c = self.cluster.as_ref().ok_or_else(|| missing("cluster"))?;
        ClusterSpec::new(
            c.name.clone().unwrap_or_else(|| "cluster".into()),
            c.workers,
            c.alpha,
            c.beta,
        )
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let m = self.model.as_ref().ok_or_else(|| missing("model"))?;
        match (&m.preset, &m.layers) {
            (Some(_), Some(_)) => Err(Error::Config(
                "model: give either `preset` or `layers`, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "model: one of `preset` or `layers` is required".into(),
            )),
            (Some(preset), None) => {
                let total_ff = m.total_ff_seconds.ok_or_else(|| {
                    Error::Config("model: `total_ff_seconds` is required with `preset`".into())
                })?;
                preset_model(
                    preset,
                    total_ff,
                    m.bp_to_ff_ratio.unwrap_or(2.0),
                    m.profile.unwrap_or_default(),
                )
            }
            (None, Some(layers)) => {
                if m.total_ff_seconds.is_some() || m.bp_to_ff_ratio.is_some() || m.profile.is_some()
                {
                    return Err(Error::Config(
                        "model: `total_ff_seconds`, `bp_to_ff_ratio` and `profile` only apply to presets"
                            .into(),
                    ));
                }
                let layers = layers
                    .iter()
                    .enumerate()
                    .map(|(i, l)| LayerSpec {
                        index: i + 1,
                        param_count: l.param_count,
                        bytes_per_element: l.bytes_per_element.unwrap_or(DEFAULT_BYTES_PER_ELEMENT),
                        t_ff: l.t_ff,
                        t_bp: l.t_bp,
                    })
                    .collect();
                ModelSpec::new(m.name.clone().unwrap_or_else(|| "custom".into()), layers)
            }
        }
    }

    pub fn samples_per_iteration(&self) -> f64 {
        self.model
            .as_ref()
            .and_then(|m| m.samples_per_iteration)
            .unwrap_or(1.0)
    }

    pub fn policy(&self) -> Result<PolicySpec> {
        let p = self.policy.as_ref().ok_or_else(|| missing("policy"))?;
        let spec = PolicySpec {
            kind: p.kind,
            fusion_buffer_bytes: p.fusion_buffer_bytes,
            partition_bytes: p.partition_bytes,
            negotiation_rounds: p.negotiation_rounds.unwrap_or(1),
            negotiation: p.negotiation.unwrap_or_default(),
            op1_sync: p.op1_sync.unwrap_or_default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tuner(&self) -> Result<TunerConfig> {
        let t = self.tuner.clone().unwrap_or_default();
        t.validate()?;
        Ok(t)
    }
}

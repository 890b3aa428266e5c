//! The JSON configuration documents the commands consume. Each command
//! takes exactly one document; unknown keys are rejected so typos fail fast
//! with exit code 2.

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::interpret::AttributionRequest;
use crate::timebase::{ComponentDesc, InterpMethod, PrepareOptions, TaskSpec};
use crate::train::{SweepConfig, TrainConfig};

/// Sidecar metadata accompanying an import CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// Dataset name; becomes the directory name under `custom_datasets/`.
    pub name: String,
    /// Grid step in seconds.
    pub delta_seconds: i64,
    /// Declared components, in CSV column order.
    pub components: Vec<ComponentDesc>,
    /// Optional gap interpolation applied right after import.
    #[serde(default)]
    pub interpolate: Option<InterpolateSpec>,
}

/// Close gaps of at most `max_gap` missing steps on import.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateSpec {
    pub max_gap: usize,
    pub method: InterpMethod,
}

/// The `tk train` config: which dataset, what task, which architecture, and
/// how to train it. Also written (normalized) into the model directory as
/// `config.json`, so later commands can rebuild the exact same preparation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommandConfig {
    /// Model name; becomes the directory name under `models/`.
    pub model_name: String,
    /// Name of an imported dataset.
    pub dataset: String,
    pub task: TaskSpec,
    #[serde(default)]
    pub prepare: PrepareOptions,
    pub arch: ArchSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

/// The `tk sweep` config: a train config plus the grid definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCommandConfig {
    pub model_name: String,
    pub dataset: String,
    pub task: TaskSpec,
    #[serde(default)]
    pub prepare: PrepareOptions,
    /// Base architecture; grid keys `arch.<hyperparam>` patch it per trial.
    pub arch: ArchSpec,
    /// Base training config; grid keys `train.<field>` patch it per trial.
    #[serde(default)]
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    /// Names the report directory `models/<model>/sweeps/<tag>/`.
    #[serde(default = "default_sweep_tag")]
    pub tag: String,
}

fn default_sweep_tag() -> String {
    "sweep".to_string()
}

impl SweepCommandConfig {
    /// The train-shaped view of this config (used to persist `config.json`
    /// for the consolidated model).
    pub fn base(&self) -> TrainCommandConfig {
        TrainCommandConfig {
            model_name: self.model_name.clone(),
            dataset: self.dataset.clone(),
            task: self.task.clone(),
            prepare: self.prepare.clone(),
            arch: self.arch.clone(),
            train: self.train.clone(),
        }
    }
}

/// The `tk interpret` config: which model, where to write, what to attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpretCommandConfig {
    pub model_name: String,
    /// Names the output directory `models/<model>/interpretations/<tag>/`.
    #[serde(default = "default_interpret_tag")]
    pub tag: String,
    pub request: AttributionRequest,
}

fn default_interpret_tag() -> String {
    "default".to_string()
}

/// A custom-architecture registration manifest (`custom_archs/*.json`).
///
/// Manifests can only alias built-in, conformance-checked constructors;
/// fields pointing at code (paths, sources) are rejected as unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchManifest {
    /// The name models may reference in their `arch.arch_name`.
    pub name: String,
    /// The built-in constructor the name resolves to.
    pub constructor: String,
    #[serde(default)]
    pub description: String,
}

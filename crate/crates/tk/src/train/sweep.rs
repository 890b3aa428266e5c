//! Grid hyperparameter sweeps: one seeded trial per grid combination, a
//! JSON-lines report, and optional consolidation of the winning checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{train_with, Checkpoint, TrainConfig, TrainError};
use crate::arch::{ArchSpec, Registry};
use crate::timebase::PreparedTask;

/// Sweep definition. Grid keys are namespaced: `arch.<hyperparam>` patches
/// the architecture spec, `train.<field>` patches the training config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: BTreeMap<String, Vec<Value>>,
    /// Keep the best trial's checkpoint; discard every other trial's.
    pub consolidate: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: BTreeMap::new(),
            consolidate: true,
        }
    }
}

/// One line of the sweep report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    /// The grid overrides this trial ran with.
    pub config: BTreeMap<String, Value>,
    /// Best validation loss; absent when the trial failed.
    pub best_val: Option<f64>,
    /// "ok" or "failed: <reason>".
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    /// Selection metric (validation loss, minimized).
    pub metric: String,
    pub trials: Vec<TrialRecord>,
    /// Winning trial id: argmin of `best_val` over successful trials.
    pub best_trial: Option<usize>,
}

/// Cartesian product of the grid, in sorted-key order with the last key
/// cycling fastest. Trial ids index this expansion.
fn expand_grid(grid: &BTreeMap<String, Vec<Value>>) -> Vec<BTreeMap<String, Value>> {
    let keys: Vec<&String> = grid.keys().collect();
    let lens: Vec<usize> = keys.iter().map(|k| grid[*k].len()).collect();
    let total: usize = lens.iter().product();
    let mut combos = Vec::with_capacity(total);
    for trial in 0..total {
        let mut rest = trial;
        let mut combo = BTreeMap::new();
        for (k, key) in keys.iter().enumerate().rev() {
            let idx = rest % lens[k];
            rest /= lens[k];
            combo.insert((*key).clone(), grid[*key][idx].clone());
        }
        combos.push(combo);
    }
    combos
}

/// Patches one trial's overrides into the architecture and training configs.
fn apply_overrides(
    arch: &mut ArchSpec,
    train: &mut TrainConfig,
    combo: &BTreeMap<String, Value>,
) -> Result<(), TrainError> {
    // training fields go through JSON so the struct stays authoritative
    let mut train_json = serde_json::to_value(&*train).expect("config serializes");
    let fields = train_json.as_object_mut().expect("config is an object");
    for (key, value) in combo {
        if let Some(name) = key.strip_prefix("arch.") {
            arch.hyperparams.insert(name.to_string(), value.clone());
        } else if let Some(field) = key.strip_prefix("train.") {
            if !fields.contains_key(field) {
                return Err(TrainError::Config(format!(
                    "unknown training field {field:?} in sweep grid"
                )));
            }
            fields.insert(field.to_string(), value.clone());
        } else {
            return Err(TrainError::Config(format!(
                "sweep grid keys must be namespaced arch.* or train.*, got {key:?}"
            )));
        }
    }
    *train = serde_json::from_value(train_json)
        .map_err(|e| TrainError::Config(format!("invalid sweep override: {e}")))?;
    Ok(())
}

/// Runs a sweep with the default registry.
pub fn sweep(
    prepared: &PreparedTask,
    base_arch: &ArchSpec,
    base_train: &TrainConfig,
    config: &SweepConfig,
) -> Result<(SweepReport, Option<Checkpoint>), TrainError> {
    sweep_with(
        &Registry::with_defaults(),
        prepared,
        base_arch,
        base_train,
        config,
    )
}

/// Trains one model per grid combination and reports every trial.
///
/// Each trial is seeded independently (the trial id is mixed into the base
/// seed unless the grid itself sweeps `train.seed`). A trial aborting with a
/// non-finite loss is recorded as failed and the sweep continues; any other
/// error stops the sweep. The winning checkpoint is returned only when
/// consolidation is requested.
pub fn sweep_with(
    registry: &Registry,
    prepared: &PreparedTask,
    base_arch: &ArchSpec,
    base_train: &TrainConfig,
    config: &SweepConfig,
) -> Result<(SweepReport, Option<Checkpoint>), TrainError> {
    if config.grid.is_empty() {
        return Err(TrainError::Config("sweep grid must be non-empty".into()));
    }
    for (key, values) in &config.grid {
        if values.is_empty() {
            return Err(TrainError::Config(format!(
                "sweep grid list for {key:?} is empty"
            )));
        }
    }

    let combos = expand_grid(&config.grid);
    let mut trials = Vec::with_capacity(combos.len());
    let mut best: Option<(usize, f64)> = None;
    let mut best_ck: Option<Checkpoint> = None;

    for (trial_id, combo) in combos.iter().enumerate() {
        let mut arch = base_arch.clone();
        let mut train_cfg = base_train.clone();
        apply_overrides(&mut arch, &mut train_cfg, combo)?;
        if !combo.contains_key("train.seed") {
            train_cfg.seed = train_cfg
                .seed
                .wrapping_add((trial_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }

        match train_with(registry, prepared, &arch, &train_cfg, &mut ()) {
            Ok(ck) => {
                let val = ck.best_val;
                if best.is_none_or(|(_, b)| val < b) {
                    best = Some((trial_id, val));
                    if config.consolidate {
                        best_ck = Some(ck);
                    }
                }
                trials.push(TrialRecord {
                    trial_id,
                    config: combo.clone(),
                    best_val: Some(val),
                    status: "ok".into(),
                });
            }
            Err(TrainError::NonFiniteLoss { epoch, context }) => {
                trials.push(TrialRecord {
                    trial_id,
                    config: combo.clone(),
                    best_val: None,
                    status: format!("failed: non-finite loss at epoch {epoch} ({context})"),
                });
            }
            Err(other) => return Err(other),
        }
    }

    let report = SweepReport {
        metric: "val_loss".into(),
        trials,
        best_trial: best.map(|(id, _)| id),
    };
    Ok((report, best_ck))
}

/// Writes the report as JSON lines, one object per trial.
pub fn write_report_jsonl(report: &SweepReport, path: &Path) -> Result<(), TrainError> {
    let mut text = String::new();
    for trial in &report.trials {
        text.push_str(
            &serde_json::to_string(trial).map_err(|e| TrainError::Corrupt(e.to_string()))?,
        );
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

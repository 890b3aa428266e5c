//! Checkpoint persistence: a JSON manifest, a flat binary parameter file,
//! and a per-epoch curves CSV, linked by content digests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochRecord, TrainConfig, TrainError};
use crate::arch::{ArchSpec, Model, ParamSet, Registry};
use crate::tensor::Tensor;
use crate::timebase::{
    ScalerParams, SplitAssignment, SplitMode, TaskSpec, TimeSeriesDataset,
};

pub(crate) const MANIFEST_FILE: &str = "checkpoint.json";
pub(crate) const PARAMS_FILE: &str = "params.bin";
pub(crate) const CURVES_FILE: &str = "curves.csv";
const FORMAT: &str = "model-checkpoint/1";

/// Split provenance kept with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub fractions: [f64; 3],
    pub mode: SplitMode,
    /// Point counts (train, val, eval).
    pub counts: [usize; 3],
    pub digest: String,
}

/// A trained model: best-epoch parameters plus everything needed to rebuild
/// and re-evaluate it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub task: TaskSpec,
    pub config: TrainConfig,
    pub scaler: ScalerParams,
    pub dataset_name: String,
    pub dataset_digest: String,
    pub split: SplitSummary,
    pub params: ParamSet,
    pub curves: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub val_metric_name: String,
    pub warnings: Vec<String>,
}

impl Checkpoint {
    /// Rebuilds the model and loads the stored parameters into it.
    pub fn instantiate(&self, registry: &Registry) -> Result<Model, TrainError> {
        let mut model = registry.build_for_task(&self.arch, &self.task, self.config.seed)?;
        if model.params.names != self.params.names {
            return Err(TrainError::Corrupt(
                "stored parameter names do not match the architecture".into(),
            ));
        }
        for (fresh, stored) in model.params.tensors.iter().zip(&self.params.tensors) {
            if fresh.shape != stored.shape {
                return Err(TrainError::Corrupt(format!(
                    "stored parameter shape {:?} does not match built shape {:?}",
                    stored.shape, fresh.shape
                )));
            }
        }
        model.params = self.params.clone();
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    format: String,
    arch: ArchSpec,
    task: TaskSpec,
    config: TrainConfig,
    scaler: ScalerParams,
    dataset_name: String,
    dataset_digest: String,
    split: SplitSummary,
    params: Vec<ParamMeta>,
    params_digest: String,
    best_epoch: usize,
    best_val: f64,
    val_metric_name: String,
    warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Content digest of a dataset: name, grid, components, and every slice's
/// timestamps and values.
pub fn dataset_digest(ds: &TimeSeriesDataset) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(ds.name.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(&ds.delta.to_le_bytes());
    for comp in &ds.components {
        bytes.extend_from_slice(comp.name.as_bytes());
        bytes.push(0);
        bytes.push(comp.role as u8);
    }
    for s in &ds.slices {
        bytes.extend_from_slice(&s.start_ts.to_le_bytes());
        bytes.extend_from_slice(&(s.values.rows as u64).to_le_bytes());
        bytes.extend_from_slice(&(s.values.cols as u64).to_le_bytes());
        for v in &s.values.data {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for &r in &s.synthetic_rows {
            bytes.extend_from_slice(&(r as u64).to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

/// Content digest of a split assignment (fractions, mode, and point lists).
pub fn split_digest(split: &SplitAssignment) -> String {
    let mut bytes = Vec::new();
    for f in split.fractions {
        bytes.extend_from_slice(&f.to_bits().to_le_bytes());
    }
    bytes.push(match split.mode {
        SplitMode::Chronological => 0,
        SplitMode::BySlice => 1,
    });
    for part in [&split.train, &split.val, &split.eval] {
        bytes.extend_from_slice(&(part.len() as u64).to_le_bytes());
        for p in part {
            bytes.extend_from_slice(&(p.slice as u64).to_le_bytes());
            bytes.extend_from_slice(&(p.t as u64).to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

fn params_bytes(params: &ParamSet) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(params.n_scalars() * 8);
    for t in &params.tensors {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// Writes manifest, parameters, and curves into `dir` (created if needed).
pub fn save_checkpoint(ck: &Checkpoint, dir: &Path) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    let bytes = params_bytes(&ck.params);
    fs::write(dir.join(PARAMS_FILE), &bytes)?;

    let manifest = ManifestFile {
        format: FORMAT.into(),
        arch: ck.arch.clone(),
        task: ck.task.clone(),
        config: ck.config.clone(),
        scaler: ck.scaler.clone(),
        dataset_name: ck.dataset_name.clone(),
        dataset_digest: ck.dataset_digest.clone(),
        split: ck.split.clone(),
        params: ck
            .params
            .names
            .iter()
            .zip(&ck.params.tensors)
            .map(|(name, t)| ParamMeta {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
        params_digest: sha256_hex(&bytes),
        best_epoch: ck.best_epoch,
        best_val: ck.best_val,
        val_metric_name: ck.val_metric_name.clone(),
        warnings: ck.warnings.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| TrainError::Corrupt(e.to_string()))?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;

    let mut csv = format!("epoch,train_loss,val_loss,{}\n", ck.val_metric_name);
    for r in &ck.curves {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_metric
        ));
    }
    fs::write(dir.join(CURVES_FILE), csv)?;
    Ok(())
}

/// Loads a checkpoint directory, verifying the parameter digest and shapes.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, TrainError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)?;
    let m: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| TrainError::Corrupt(format!("{}: {e}", manifest_path.display())))?;
    if m.format != FORMAT {
        return Err(TrainError::Corrupt(format!(
            "unsupported checkpoint format {:?}",
            m.format
        )));
    }

    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    if sha256_hex(&bytes) != m.params_digest {
        return Err(TrainError::Corrupt(
            "parameter file does not match its recorded digest".into(),
        ));
    }
    let expected: usize = m
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != expected * 8 {
        return Err(TrainError::Corrupt(format!(
            "parameter file holds {} bytes, manifest implies {}",
            bytes.len(),
            expected * 8
        )));
    }
    let mut params = ParamSet::default();
    let mut offset = 0;
    for meta in &m.params {
        let n: usize = meta.shape.iter().product();
        let data: Vec<f64> = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += n * 8;
        params.names.push(meta.name.clone());
        params
            .tensors
            .push(Tensor::from_vec(&meta.shape, data).with_grad());
    }

    let curves = read_curves(&dir.join(CURVES_FILE))?;

    Ok(Checkpoint {
        arch: m.arch,
        task: m.task,
        config: m.config,
        scaler: m.scaler,
        dataset_name: m.dataset_name,
        dataset_digest: m.dataset_digest,
        split: m.split,
        params,
        curves,
        best_epoch: m.best_epoch,
        best_val: m.best_val,
        val_metric_name: m.val_metric_name,
        warnings: m.warnings,
    })
}

fn read_curves(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TrainError::Corrupt(format!(
                "curves row {i} has {} fields, expected 4",
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| TrainError::Corrupt(format!("curves row {i}: {e}")))
        };
        out.push(EpochRecord {
            epoch: fields[0]
                .parse()
                .map_err(|e| TrainError::Corrupt(format!("curves row {i}: {e}")))?,
            train_loss: parse(fields[1])?,
            val_loss: parse(fields[2])?,
            val_metric: parse(fields[3])?,
        });
    }
    Ok(out)
}

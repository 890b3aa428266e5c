//! Experiment-directory lifecycle and the command layer behind the `tk`
//! binary: a fixed on-disk layout, a lock serializing commands, an
//! append-only run manifest, registration of custom architectures, and the
//! seven commands (`import`, `synth`, `train`, `sweep`, `evaluate`,
//! `interpret`, `verify`).
//!
//! # Layout
//!
//! ```text
//! <root>/
//!   runs.jsonl                      append-only log of executed commands
//!   custom_datasets/<name>/         column store (manifest.json + data.bin)
//!     source/                       generated CSV/meta/rule files (synth)
//!   models/<name>/
//!     checkpoint.json  params.bin  curves.csv  config.json  [curves.svg]
//!     eval_<split>.json  [fit_<split>.svg]
//!     sweeps/<tag>/report.jsonl
//!     interpretations/<tag>/        request/summary JSON, CSVs, SVGs
//!   custom_archs/*.json             architecture registration manifests
//! ```
//!
//! Every command that writes artifacts refuses to overwrite existing ones
//! unless forced, and takes the directory lock for its duration. Exit codes
//! are a stable contract: 0 success, 2 usage or configuration error,
//! 3 conflict, 4 runtime failure.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchDef, ArchError, ArchSpec, Model, Registry, TaskShapes};
use crate::interpret::InterpretError;
use crate::timebase::{load_dataset, PreparedTask, Split, TimebaseError};
use crate::train::{dataset_digest, load_checkpoint, split_digest, Checkpoint, TrainError};

mod commands;
mod config;
mod synth;
mod viz;

pub use commands::{
    cmd_evaluate, cmd_import, cmd_interpret, cmd_sweep, cmd_synth, cmd_train, cmd_verify,
    EvaluateSummary, ImportSummary, InterpretSummary, SweepSummary, SynthSummary, TrainSummary,
    VerifyReport,
};
pub use config::{
    ArchManifest, DatasetMeta, InterpolateSpec, InterpretCommandConfig, SweepCommandConfig,
    TrainCommandConfig,
};
pub use synth::{generate, GapSpec, Generated, InputKind, RuleTerm, SyntheticSpec};
pub use viz::{fit_plot_svg, line_chart_svg, training_curves_svg, Series};

/// Name of the lock file at the experiment root.
pub const LOCK_FILE: &str = ".lock";
/// Name of the append-only run manifest at the experiment root.
pub const RUNS_FILE: &str = "runs.jsonl";

/// A command failure, classified by the exit code it maps to.
#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Bad invocation or configuration (exit 2): unparseable config files,
    /// unknown names, invalid task or rule definitions.
    #[error("{0}")]
    Usage(String),
    /// Refusal to clobber existing artifacts or to run concurrently
    /// (exit 3).
    #[error("{0}")]
    Conflict(String),
    /// A failure while executing an otherwise valid command (exit 4):
    /// training aborts, corrupt artifacts, I/O errors.
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    /// The process exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Usage(_) => 2,
            ExperimentError::Conflict(_) => 3,
            ExperimentError::Runtime(_) => 4,
        }
    }
}

pub(crate) fn usage(msg: impl Display) -> ExperimentError {
    ExperimentError::Usage(one_line(msg))
}

pub(crate) fn conflict(msg: impl Display) -> ExperimentError {
    ExperimentError::Conflict(one_line(msg))
}

pub(crate) fn runtime(msg: impl Display) -> ExperimentError {
    ExperimentError::Runtime(one_line(msg))
}

/// Error messages are machine-parseable single lines.
fn one_line(msg: impl Display) -> String {
    msg.to_string().replace('\n', "; ")
}

/// Maps a timebase error: store corruption and I/O are runtime failures,
/// everything else reflects the inputs or the configuration.
pub(crate) fn timebase_err(e: TimebaseError) -> ExperimentError {
    match e {
        TimebaseError::Io(_) | TimebaseError::Manifest(_) | TimebaseError::CorruptStore(_) => {
            runtime(e)
        }
        other => usage(other),
    }
}

fn arch_err(e: ArchError) -> ExperimentError {
    match e {
        ArchError::UnknownArchitecture(_)
        | ArchError::IncompatibleHyperparams(_)
        | ArchError::DuplicateName(_)
        | ArchError::ContractViolation { .. } => usage(e),
        other => runtime(other),
    }
}

/// Maps a trainer error: configuration-shaped failures exit 2, aborts and
/// corruption exit 4.
pub(crate) fn train_err(e: TrainError) -> ExperimentError {
    match e {
        TrainError::Config(_)
        | TrainError::EmptyTrainSplit
        | TrainError::EmptySplit(_)
        | TrainError::UnknownSplit(_) => usage(e),
        TrainError::Timebase(inner) => timebase_err(inner),
        TrainError::Arch(inner) => arch_err(inner),
        other => runtime(other),
    }
}

/// Maps an interpreter error: bad requests exit 2, selection or attribution
/// failures exit 4.
pub(crate) fn interpret_err(e: InterpretError) -> ExperimentError {
    match e {
        InterpretError::Config(_) => usage(e),
        InterpretError::Train(inner) => train_err(inner),
        InterpretError::Timebase(inner) => timebase_err(inner),
        other => runtime(other),
    }
}

/// Checks a dataset/model/tag name for use as a directory name.
pub(crate) fn validate_name(kind: &str, name: &str) -> Result<(), ExperimentError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(usage(format!(
            "invalid {kind} name {name:?}: use up to 64 ASCII letters, digits, `-` or `_`"
        )))
    }
}

pub(crate) fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Eval => "eval",
    }
}

/// A rooted experiment directory with the canonical sub-layout.
#[derive(Debug, Clone)]
pub struct ExperimentDir {
    root: PathBuf,
}

impl ExperimentDir {
    /// Opens the root, creating it and its subdirectories if needed.
    pub fn create(root: &Path) -> Result<Self, ExperimentError> {
        let dir = Self {
            root: root.to_path_buf(),
        };
        for sub in [
            dir.root.clone(),
            dir.datasets_dir(),
            dir.models_dir(),
            dir.archs_dir(),
        ] {
            fs::create_dir_all(&sub)
                .map_err(|e| runtime(format!("cannot create {}: {e}", sub.display())))?;
        }
        Ok(dir)
    }

    /// Opens an existing root; missing roots are a usage error.
    pub fn open(root: &Path) -> Result<Self, ExperimentError> {
        if !root.is_dir() {
            return Err(usage(format!(
                "experiment root {} does not exist",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("custom_datasets")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn archs_dir(&self) -> PathBuf {
        self.root.join("custom_archs")
    }

    pub fn dataset_dir(&self, name: &str) -> PathBuf {
        self.datasets_dir().join(name)
    }

    pub fn model_dir(&self, name: &str) -> PathBuf {
        self.models_dir().join(name)
    }

    /// Takes the directory lock; held until the guard drops.
    pub fn lock(&self) -> Result<DirLock, ExperimentError> {
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(conflict(format!(
                "another command holds the lock {}; wait for it or remove a stale lock",
                path.display()
            ))),
            Err(e) => Err(runtime(format!("cannot lock {}: {e}", path.display()))),
        }
    }

    /// Appends one record to the run manifest.
    pub fn append_run(&self, record: &RunRecord) -> Result<(), ExperimentError> {
        let path = self.root.join(RUNS_FILE);
        let line = serde_json::to_string(record)
            .map_err(|e| runtime(format!("cannot encode run record: {e}")))?;
        let mut file = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| runtime(format!("cannot open {}: {e}", path.display())))?;
        writeln!(file, "{line}").map_err(|e| runtime(format!("cannot append run record: {e}")))?;
        Ok(())
    }

    /// Reads the full run manifest (empty if none exists yet).
    pub fn runs(&self) -> Result<Vec<RunRecord>, ExperimentError> {
        let path = self.root.join(RUNS_FILE);
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| {
                    runtime(format!("{} line {}: {e}", path.display(), i + 1))
                })
            })
            .collect()
    }

    /// A path rendered relative to the root, for records and summaries.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .display()
            .to_string()
    }
}

/// Holds the experiment-directory lock; dropping releases it.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One line of the append-only run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    /// Command kind: `import`, `synth`, `train`, ...
    pub operation: String,
    /// Wall-clock UTC time the command ran.
    pub timestamp: String,
    /// SHA-256 of the config file bytes, when the command took one.
    #[serde(default)]
    pub config_digest: Option<String>,
    /// Content hashes of the command's inputs (dataset digests, ...).
    #[serde(default)]
    pub input_digests: BTreeMap<String, String>,
    /// Root-relative paths the command wrote.
    pub outputs: Vec<String>,
    /// Toolkit version that produced the record.
    pub version: String,
}

impl RunRecord {
    pub fn new(operation: &str) -> Self {
        Self {
            operation: operation.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config_digest: None,
            input_digests: BTreeMap::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Registers a custom name for a built-in constructor. Architectures are
/// code; an experiment directory can only alias constructors that ship with
/// the toolkit, never load new ones.
struct AliasDef {
    alias: String,
    inner: Arc<dyn ArchDef>,
}

impl ArchDef for AliasDef {
    fn name(&self) -> &str {
        &self.alias
    }

    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError> {
        self.inner.build(spec, shapes, seed)
    }

    fn conformance_spec(&self) -> ArchSpec {
        let mut spec = self.inner.conformance_spec();
        spec.arch_name = self.alias.clone();
        spec
    }
}

/// The built-in registry extended with the directory's custom-architecture
/// manifests (`custom_archs/*.json`), each conformance-checked on
/// registration.
pub fn load_registry(dir: &ExperimentDir) -> Result<Registry, ExperimentError> {
    let mut registry = Registry::with_defaults();
    let archs = dir.archs_dir();
    if !archs.is_dir() {
        return Ok(registry);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&archs)
        .map_err(|e| runtime(format!("cannot read {}: {e}", archs.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let text = fs::read_to_string(&path)
            .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
        let manifest: ArchManifest = serde_json::from_str(&text).map_err(|e| {
            usage(format!(
                "{}: invalid architecture manifest: {e}",
                path.display()
            ))
        })?;
        validate_name("architecture", &manifest.name)?;
        let inner = registry.get(&manifest.constructor).ok_or_else(|| {
            usage(format!(
                "{}: unknown constructor {:?}; manifests may only name built-in \
                 constructors ({}) — loading architecture code is not supported",
                path.display(),
                manifest.constructor,
                Registry::with_defaults().names().join(", ")
            ))
        })?;
        registry
            .register(Arc::new(AliasDef {
                alias: manifest.name.clone(),
                inner,
            }))
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    Ok(registry)
}

/// Everything needed to evaluate or interpret a trained model: its config,
/// checkpoint, re-prepared task, and the registry it builds from.
pub struct ModelContext {
    pub config: TrainCommandConfig,
    pub checkpoint: Checkpoint,
    pub prepared: PreparedTask,
    pub registry: Registry,
}

/// Loads a dataset by name and binds it to the configured task.
pub(crate) fn prepare_dataset(
    dir: &ExperimentDir,
    config: &TrainCommandConfig,
) -> Result<PreparedTask, ExperimentError> {
    validate_name("dataset", &config.dataset)?;
    let ds_dir = dir.dataset_dir(&config.dataset);
    if !ds_dir.is_dir() {
        return Err(usage(format!(
            "dataset {:?} is not imported (no {}); run `tk import` or `tk synth` first",
            config.dataset,
            ds_dir.display()
        )));
    }
    let ds = load_dataset(&ds_dir).map_err(timebase_err)?;
    PreparedTask::prepare(ds, config.task.clone(), &config.prepare).map_err(timebase_err)
}

/// Loads a trained model's config and checkpoint, re-prepares its task, and
/// cross-checks the dataset and split digests recorded at training time.
pub fn load_model_context(
    dir: &ExperimentDir,
    model_name: &str,
) -> Result<ModelContext, ExperimentError> {
    validate_name("model", model_name)?;
    let mdir = dir.model_dir(model_name);
    if !mdir.join("checkpoint.json").is_file() {
        return Err(usage(format!(
            "model {model_name:?} has no checkpoint under {}; train it first",
            mdir.display()
        )));
    }
    let config_path = mdir.join("config.json");
    let text = fs::read_to_string(&config_path)
        .map_err(|e| runtime(format!("cannot read {}: {e}", config_path.display())))?;
    let config: TrainCommandConfig = serde_json::from_str(&text)
        .map_err(|e| runtime(format!("{} is corrupt: {e}", config_path.display())))?;
    let checkpoint = load_checkpoint(&mdir).map_err(train_err)?;
    let registry = load_registry(dir)?;
    let prepared = prepare_dataset(dir, &config)?;

    let ds_digest = dataset_digest(&prepared.dataset);
    if ds_digest != checkpoint.dataset_digest {
        return Err(runtime(format!(
            "dataset {:?} changed since model {model_name:?} was trained \
             (digest {ds_digest} != recorded {})",
            config.dataset, checkpoint.dataset_digest
        )));
    }
    if split_digest(&prepared.split) != checkpoint.split.digest {
        return Err(runtime(format!(
            "re-prepared split for model {model_name:?} does not match the one recorded \
             at training time"
        )));
    }
    Ok(ModelContext {
        config,
        checkpoint,
        prepared,
        registry,
    })
}

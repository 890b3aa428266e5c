//! The seven `tk` commands as library functions. Each takes the directory
//! lock, refuses to clobber artifacts unless forced, appends a run record
//! when it writes anything, and returns a typed summary for the CLI to
//! print.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::{DatasetMeta, InterpretCommandConfig, SweepCommandConfig, TrainCommandConfig};
use super::synth::SyntheticSpec;
use super::{
    conflict, generate, interpret_err, load_model_context, load_registry, prepare_dataset,
    runtime, split_name, timebase_err, train_err, usage, validate_name, viz, ExperimentDir,
    ExperimentError, RunRecord,
};
use crate::interpret::{
    aggregate_importance, heatmap_svg, parse_attribution_csv, render_attribution,
    run_attribution, AttributionRequest, ColorScale, Method,
};
use crate::matrix::Matrix;
use crate::timebase::{
    import_dataset, interpolate_gaps, load_dataset, read_csv_table, save_dataset, Split,
    TimeSeriesDataset,
};
use crate::train::{
    dataset_digest, evaluate, load_checkpoint, parse_split, predict_points, save_checkpoint,
    sha256_hex, split_digest, sweep_with, train_with, Metrics, TrialRecord,
};

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("cannot encode {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path)
        .map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))
}

fn remove_path(path: &Path) -> Result<(), ExperimentError> {
    let result = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    result.map_err(|e| runtime(format!("cannot remove {}: {e}", path.display())))
}

/// Subdirectories of `parent`, sorted by name (empty if `parent` is absent).
fn sorted_dirs(parent: &Path) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(parent) else {
        return Vec::new();
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

/// Reserves `custom_datasets/<name>`: refuses if present (unless forced),
/// then (re)creates it empty.
fn claim_dataset_dir(
    dir: &ExperimentDir,
    name: &str,
    force: bool,
) -> Result<PathBuf, ExperimentError> {
    let target = dir.dataset_dir(name);
    if target.exists() {
        if !force {
            return Err(conflict(format!(
                "dataset {name:?} already exists at {}; pass --force to replace it",
                target.display()
            )));
        }
        remove_path(&target)?;
    }
    create_dir(&target)?;
    Ok(target)
}

/// Removes a model's artifacts before overwriting, keeping historical sweep
/// reports.
fn clear_model_artifacts(mdir: &Path) -> Result<(), ExperimentError> {
    if !mdir.exists() {
        return Ok(());
    }
    let entries =
        fs::read_dir(mdir).map_err(|e| runtime(format!("cannot read {}: {e}", mdir.display())))?;
    for entry in entries {
        let path = entry
            .map_err(|e| runtime(format!("cannot read {}: {e}", mdir.display())))?
            .path();
        if path.file_name().is_some_and(|n| n == "sweeps") {
            continue;
        }
        remove_path(&path)?;
    }
    Ok(())
}

fn slice_lengths(ds: &TimeSeriesDataset) -> Vec<usize> {
    ds.slices.iter().map(|s| s.len()).collect()
}

fn describe_components(ds: &TimeSeriesDataset) -> Vec<String> {
    ds.components
        .iter()
        .map(|c| format!("{} ({:?})", c.name, c.role).to_lowercase())
        .collect()
}

// ---------------------------------------------------------------------------
// import

/// What `tk import` did: where the dataset landed and its shape.
#[derive(Debug, Clone)]
pub struct ImportSummary {
    pub dataset: String,
    pub dir: PathBuf,
    pub digest: String,
    pub n_rows: usize,
    pub slice_lengths: Vec<usize>,
    pub components: Vec<String>,
    /// Rows synthesized by gap interpolation during import.
    pub interpolated_rows: usize,
}

impl ImportSummary {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("imported dataset {:?} -> {}", self.dataset, self.dir.display()),
            format!(
                "rows: {} across {} slice(s) (lengths: {})",
                self.n_rows,
                self.slice_lengths.len(),
                self.slice_lengths
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            format!("components: {}", self.components.join(", ")),
        ];
        if self.interpolated_rows > 0 {
            out.push(format!(
                "interpolated {} gap row(s)",
                self.interpolated_rows
            ));
        }
        out.push(format!("digest: {}", self.digest));
        out
    }
}

/// Imports a CSV + meta-JSON pair into `custom_datasets/<name>/`.
pub fn cmd_import(
    root: &Path,
    csv: &Path,
    meta: &Path,
    force: bool,
) -> Result<ImportSummary, ExperimentError> {
    let dir = ExperimentDir::create(root)?;
    let _lock = dir.lock()?;

    let meta_text = fs::read_to_string(meta)
        .map_err(|e| usage(format!("cannot read meta file {}: {e}", meta.display())))?;
    let meta_cfg: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| usage(format!("invalid meta file {}: {e}", meta.display())))?;
    validate_name("dataset", &meta_cfg.name)?;

    let table = read_csv_table(csv).map_err(usage)?;
    let mut ds = import_dataset(
        &table,
        &meta_cfg.name,
        meta_cfg.delta_seconds,
        &meta_cfg.components,
    )
    .map_err(usage)?;
    if let Some(spec) = &meta_cfg.interpolate {
        ds = interpolate_gaps(&ds, spec.max_gap, spec.method);
    }

    let target = claim_dataset_dir(&dir, &meta_cfg.name, force)?;
    save_dataset(&ds, &target).map_err(timebase_err)?;
    let digest = dataset_digest(&ds);

    let mut record = RunRecord::new("import");
    record.config_digest = Some(sha256_hex(meta_text.as_bytes()));
    record
        .input_digests
        .insert("dataset".to_string(), digest.clone());
    record.outputs = vec![dir.relative(&target)];
    dir.append_run(&record)?;

    Ok(ImportSummary {
        dataset: meta_cfg.name,
        digest,
        n_rows: ds.n_total(),
        slice_lengths: slice_lengths(&ds),
        components: describe_components(&ds),
        interpolated_rows: ds.slices.iter().map(|s| s.synthetic_rows.len()).sum(),
        dir: target,
    })
}

// ---------------------------------------------------------------------------
// synth

/// What `tk synth` generated and registered.
#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub dataset: String,
    pub dir: PathBuf,
    pub digest: String,
    pub n_rows: usize,
    pub slice_lengths: Vec<usize>,
    pub csv: PathBuf,
    pub meta: PathBuf,
    pub rule: PathBuf,
}

impl SynthSummary {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("generated dataset {:?} -> {}", self.dataset, self.dir.display()),
            format!(
                "rows: {} across {} slice(s) (lengths: {})",
                self.n_rows,
                self.slice_lengths.len(),
                self.slice_lengths
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            format!(
                "source files: {}, {}, {}",
                self.csv.display(),
                self.meta.display(),
                self.rule.display()
            ),
            format!("digest: {}", self.digest),
        ]
    }
}

/// Generates a synthetic dataset from a spec file, writes the importable
/// CSV/meta/rule files under `custom_datasets/<name>/source/`, and imports
/// them through the regular pipeline.
pub fn cmd_synth(
    root: &Path,
    spec_path: &Path,
    force: bool,
) -> Result<SynthSummary, ExperimentError> {
    let dir = ExperimentDir::create(root)?;
    let _lock = dir.lock()?;

    let spec_text = fs::read_to_string(spec_path)
        .map_err(|e| usage(format!("cannot read spec file {}: {e}", spec_path.display())))?;
    let spec: SyntheticSpec = serde_json::from_str(&spec_text)
        .map_err(|e| usage(format!("invalid synthetic spec {}: {e}", spec_path.display())))?;
    let generated = generate(&spec)?;

    let target = claim_dataset_dir(&dir, &spec.name, force)?;
    let source = target.join("source");
    create_dir(&source)?;
    let csv_path = source.join(format!("{}.csv", spec.name));
    let meta_path = source.join(format!("{}.meta.json", spec.name));
    let rule_path = source.join("rule.json");
    write_text(&csv_path, &generated.to_csv())?;
    let meta = spec.meta();
    write_json(&meta_path, &meta)?;
    write_json(&rule_path, &spec)?;

    // Round-trip through the regular import path, proving the generated
    // files are importable exactly as written.
    let table = read_csv_table(&csv_path).map_err(|e| runtime(format!("generated CSV: {e}")))?;
    let ds = import_dataset(&table, &meta.name, meta.delta_seconds, &meta.components)
        .map_err(|e| runtime(format!("generated CSV does not import: {e}")))?;
    save_dataset(&ds, &target).map_err(timebase_err)?;
    let digest = dataset_digest(&ds);

    let mut record = RunRecord::new("synth");
    record.config_digest = Some(sha256_hex(spec_text.as_bytes()));
    record
        .input_digests
        .insert("dataset".to_string(), digest.clone());
    record.outputs = vec![
        dir.relative(&target),
        dir.relative(&csv_path),
        dir.relative(&meta_path),
        dir.relative(&rule_path),
    ];
    dir.append_run(&record)?;

    Ok(SynthSummary {
        dataset: spec.name.clone(),
        digest,
        n_rows: ds.n_total(),
        slice_lengths: slice_lengths(&ds),
        dir: target,
        csv: csv_path,
        meta: meta_path,
        rule: rule_path,
    })
}

// ---------------------------------------------------------------------------
// train

/// What `tk train` produced.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: String,
    pub dir: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub val_metric_name: String,
    /// The raw-unit validation metric at the best epoch.
    pub val_metric: f64,
    pub warnings: Vec<String>,
    pub curves_svg: Option<PathBuf>,
}

impl TrainSummary {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("trained model {:?} -> {}", self.model, self.dir.display()),
            format!(
                "epochs: {} (best {}), val loss {:.6e}, {} {:.6}",
                self.epochs_run, self.best_epoch, self.best_val, self.val_metric_name,
                self.val_metric
            ),
        ];
        for w in &self.warnings {
            out.push(format!("warning: {w}"));
        }
        if let Some(svg) = &self.curves_svg {
            out.push(format!("curves plot: {}", svg.display()));
        }
        out
    }
}

/// Trains one model from a config file into `models/<name>/`.
pub fn cmd_train(
    root: &Path,
    config_path: &Path,
    viz_flag: bool,
    force: bool,
) -> Result<TrainSummary, ExperimentError> {
    let dir = ExperimentDir::create(root)?;
    let _lock = dir.lock()?;

    let text = fs::read_to_string(config_path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let config: TrainCommandConfig = serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid train config {}: {e}", config_path.display())))?;
    validate_name("model", &config.model_name)?;

    let mdir = dir.model_dir(&config.model_name);
    if mdir.join("checkpoint.json").exists() && !force {
        return Err(conflict(format!(
            "model {:?} already exists at {}; pass --force to retrain it",
            config.model_name,
            mdir.display()
        )));
    }

    let registry = load_registry(&dir)?;
    let prepared = prepare_dataset(&dir, &config)?;
    let ck = train_with(&registry, &prepared, &config.arch, &config.train, &mut ())
        .map_err(train_err)?;

    clear_model_artifacts(&mdir)?;
    create_dir(&mdir)?;
    save_checkpoint(&ck, &mdir).map_err(train_err)?;
    write_json(&mdir.join("config.json"), &config)?;
    let curves_svg = if viz_flag {
        let path = mdir.join("curves.svg");
        write_text(&path, &viz::training_curves_svg(&ck.curves))?;
        Some(path)
    } else {
        None
    };

    let mut record = RunRecord::new("train");
    record.config_digest = Some(sha256_hex(text.as_bytes()));
    record
        .input_digests
        .insert("dataset".to_string(), ck.dataset_digest.clone());
    record.outputs = vec![dir.relative(&mdir)];
    dir.append_run(&record)?;

    Ok(TrainSummary {
        model: config.model_name,
        dir: mdir,
        epochs_run: ck.curves.len(),
        best_epoch: ck.best_epoch,
        best_val: ck.best_val,
        val_metric_name: ck.val_metric_name.clone(),
        val_metric: ck.curves[ck.best_epoch].val_metric,
        warnings: ck.warnings.clone(),
        curves_svg,
    })
}

// ---------------------------------------------------------------------------
// sweep

/// What `tk sweep` ran and retained.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub model: String,
    pub report: PathBuf,
    pub n_trials: usize,
    pub n_failed: usize,
    pub best_trial: Option<usize>,
    pub best_val: Option<f64>,
    /// The consolidated model directory, when consolidation was requested.
    pub consolidated: Option<PathBuf>,
}

impl SweepSummary {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![format!(
            "swept {} trial(s) ({} failed) -> {}",
            self.n_trials,
            self.n_failed,
            self.report.display()
        )];
        match (self.best_trial, self.best_val) {
            (Some(id), Some(val)) => {
                out.push(format!("best trial: {id} (val loss {val:.6e})"));
            }
            _ => out.push("no trial finished".to_string()),
        }
        if let Some(dir) = &self.consolidated {
            out.push(format!("consolidated checkpoint: {}", dir.display()));
        }
        out
    }
}

/// Runs a hyperparameter sweep; writes the JSONL report under
/// `models/<name>/sweeps/<tag>/` and, when consolidating, retains the best
/// trial's checkpoint as the model.
pub fn cmd_sweep(
    root: &Path,
    config_path: &Path,
    force: bool,
) -> Result<SweepSummary, ExperimentError> {
    let dir = ExperimentDir::create(root)?;
    let _lock = dir.lock()?;

    let text = fs::read_to_string(config_path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let config: SweepCommandConfig = serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid sweep config {}: {e}", config_path.display())))?;
    validate_name("model", &config.model_name)?;
    validate_name("sweep tag", &config.tag)?;

    let mdir = dir.model_dir(&config.model_name);
    let sweep_dir = mdir.join("sweeps").join(&config.tag);
    if sweep_dir.exists() && !force {
        return Err(conflict(format!(
            "sweep {:?} already exists at {}; pass --force to replace it",
            config.tag,
            sweep_dir.display()
        )));
    }
    if config.sweep.consolidate && mdir.join("checkpoint.json").exists() && !force {
        return Err(conflict(format!(
            "model {:?} already exists at {}; pass --force to let the sweep replace it",
            config.model_name,
            mdir.display()
        )));
    }

    let registry = load_registry(&dir)?;
    let prepared = prepare_dataset(&dir, &config.base())?;
    let (report, best_ck) = sweep_with(
        &registry,
        &prepared,
        &config.arch,
        &config.train,
        &config.sweep,
    )
    .map_err(train_err)?;

    let consolidated = if let Some(ck) = best_ck {
        clear_model_artifacts(&mdir)?;
        create_dir(&mdir)?;
        save_checkpoint(&ck, &mdir).map_err(train_err)?;
        // config.json must describe the retained model, so the winning
        // trial's overrides replace the base arch and train fields.
        let mut retained = config.base();
        retained.arch = ck.arch.clone();
        retained.train = ck.config.clone();
        write_json(&mdir.join("config.json"), &retained)?;
        Some(mdir.clone())
    } else {
        None
    };

    if sweep_dir.exists() {
        remove_path(&sweep_dir)?;
    }
    create_dir(&sweep_dir)?;
    let report_path = sweep_dir.join("report.jsonl");
    crate::train::write_report_jsonl(&report, &report_path).map_err(train_err)?;

    let mut record = RunRecord::new("sweep");
    record.config_digest = Some(sha256_hex(text.as_bytes()));
    record
        .input_digests
        .insert("dataset".to_string(), dataset_digest(&prepared.dataset));
    record.outputs = vec![dir.relative(&report_path)];
    if let Some(c) = &consolidated {
        record.outputs.push(dir.relative(c));
    }
    dir.append_run(&record)?;

    let n_failed = report.trials.iter().filter(|t| t.status != "ok").count();
    let best_val = report
        .best_trial
        .and_then(|id| report.trials[id].best_val);
    Ok(SweepSummary {
        model: config.model_name,
        report: report_path,
        n_trials: report.trials.len(),
        n_failed,
        best_trial: report.best_trial,
        best_val,
        consolidated,
    })
}

// ---------------------------------------------------------------------------
// evaluate

/// What `tk evaluate` measured and wrote.
#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub model: String,
    pub split: Split,
    pub n_points: usize,
    pub loss_scaled: f64,
    pub metrics: Metrics,
    pub json: PathBuf,
    pub fit: Option<PathBuf>,
}

impl EvaluateSummary {
    pub fn lines(&self) -> Vec<String> {
        let headline = match &self.metrics {
            Metrics::Regression { mse, mae, .. } => {
                format!("mse {mse:.6e}, mae {mae:.6e}")
            }
            Metrics::Classification {
                accuracy, macro_f1, ..
            } => format!("accuracy {accuracy:.4}, macro f1 {macro_f1:.4}"),
        };
        let mut out = vec![
            format!(
                "evaluated model {:?} on {} ({} points): {headline}",
                self.model,
                split_name(self.split),
                self.n_points
            ),
            format!("report: {}", self.json.display()),
        ];
        if let Some(fit) = &self.fit {
            out.push(format!("fit plot: {}", fit.display()));
        }
        out
    }
}

/// Evaluates a trained model on one split, writing the metrics JSON and,
/// with `viz`, a fit plot (regression) or confusion matrix (classification).
pub fn cmd_evaluate(
    root: &Path,
    model_name: &str,
    split_str: &str,
    viz_flag: bool,
    components: &[String],
) -> Result<EvaluateSummary, ExperimentError> {
    let dir = ExperimentDir::open(root)?;
    let _lock = dir.lock()?;

    let split = parse_split(split_str).map_err(train_err)?;
    let ctx = load_model_context(&dir, model_name)?;
    let report = evaluate(&ctx.registry, &ctx.checkpoint, &ctx.prepared, split)
        .map_err(train_err)?;

    let mdir = dir.model_dir(model_name);
    let json_path = mdir.join(format!("eval_{}.json", split_name(split)));
    write_json(&json_path, &report)?;

    let fit = if viz_flag {
        let path = mdir.join(format!("fit_{}.svg", split_name(split)));
        let svg = match &report.metrics {
            Metrics::Classification { confusion, .. } => confusion_svg(confusion),
            Metrics::Regression { .. } => fit_series_svg(&ctx, split, components)?,
        };
        write_text(&path, &svg)?;
        Some(path)
    } else {
        None
    };

    let mut record = RunRecord::new("evaluate");
    record
        .input_digests
        .insert("dataset".to_string(), ctx.checkpoint.dataset_digest.clone());
    record.outputs = vec![dir.relative(&json_path)];
    if let Some(f) = &fit {
        record.outputs.push(dir.relative(f));
    }
    dir.append_run(&record)?;

    Ok(EvaluateSummary {
        model: model_name.to_string(),
        split,
        n_points: report.n_points,
        loss_scaled: report.loss_scaled,
        metrics: report.metrics,
        json: json_path,
        fit,
    })
}

fn confusion_svg(confusion: &[Vec<usize>]) -> String {
    let k = confusion.len();
    let rows: Vec<Vec<f64>> = confusion
        .iter()
        .map(|row| row.iter().map(|&c| c as f64).collect())
        .collect();
    let m = Matrix::from_rows(&rows);
    let row_labels: Vec<String> = (0..k).map(|i| format!("true {i}")).collect();
    let col_labels: Vec<String> = (0..k).map(|i| format!("pred {i}")).collect();
    heatmap_svg(
        &m,
        &row_labels,
        &col_labels,
        ColorScale::Sequential,
        "confusion matrix",
    )
}

/// Builds the target/prediction series per requested output component.
fn fit_series_svg(
    ctx: &super::ModelContext,
    split: Split,
    components: &[String],
) -> Result<String, ExperimentError> {
    let out_components = &ctx.prepared.task.out_components;
    let chosen: Vec<String> = if components.is_empty() {
        out_components.clone()
    } else {
        for c in components {
            if !out_components.contains(c) {
                return Err(usage(format!(
                    "component {c:?} is not an output of this task; outputs are: {}",
                    out_components.join(", ")
                )));
            }
        }
        components.to_vec()
    };

    let points = ctx.prepared.points(split);
    let preds = predict_points(&ctx.registry, &ctx.checkpoint, &ctx.prepared, points)
        .map_err(train_err)?;

    let mut series = Vec::with_capacity(chosen.len() * 2);
    for name in &chosen {
        let col = out_components
            .iter()
            .position(|c| c == name)
            .expect("validated component");
        series.push(viz::Series {
            label: format!("{name} (target)"),
            values: preds.iter().map(|p| p.target_raw.get(0, col)).collect(),
        });
        series.push(viz::Series {
            label: format!("{name} (predicted)"),
            values: preds.iter().map(|p| p.output_raw.get(0, col)).collect(),
        });
    }
    Ok(viz::fit_plot_svg(split_name(split), &series))
}

// ---------------------------------------------------------------------------
// interpret

/// What `tk interpret` attributed and rendered.
#[derive(Debug, Clone)]
pub struct InterpretSummary {
    pub model: String,
    pub tag: String,
    pub dir: PathBuf,
    pub method: Method,
    pub n_points: usize,
    pub files: Vec<PathBuf>,
}

impl InterpretSummary {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!(
                "interpreted model {:?} with {} on {} point(s)",
                self.model,
                self.method.name(),
                self.n_points
            ),
            format!(
                "wrote {} file(s) under {}",
                self.files.len(),
                self.dir.display()
            ),
        ]
    }
}

/// Runs an attribution request against a trained model and writes the
/// per-point heatmaps/CSVs, the importance aggregate, and the JSON metadata
/// under `models/<name>/interpretations/<tag>/`.
pub fn cmd_interpret(
    root: &Path,
    config_path: &Path,
    force: bool,
) -> Result<InterpretSummary, ExperimentError> {
    let dir = ExperimentDir::open(root)?;
    let _lock = dir.lock()?;

    let text = fs::read_to_string(config_path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let config: InterpretCommandConfig = serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid interpret config {}: {e}", config_path.display())))?;
    validate_name("interpretation tag", &config.tag)?;
    let ctx = load_model_context(&dir, &config.model_name)?;

    let idir = dir
        .model_dir(&config.model_name)
        .join("interpretations")
        .join(&config.tag);
    if idir.exists() {
        if !force {
            return Err(conflict(format!(
                "interpretation {:?} already exists at {}; pass --force to replace it",
                config.tag,
                idir.display()
            )));
        }
        remove_path(&idir)?;
    }

    let report = run_attribution(&ctx.registry, &ctx.checkpoint, &ctx.prepared, &config.request)
        .map_err(interpret_err)?;
    let importance = aggregate_importance(&report.points).map_err(interpret_err)?;

    create_dir(&idir)?;
    let mut files = vec![idir.join("request.json"), idir.join("summary.json")];
    write_json(&files[0], &config.request)?;

    let task = &ctx.prepared.task;
    let mut point_meta = Vec::with_capacity(report.points.len());
    for (i, p) in report.points.iter().enumerate() {
        let stem = format!("point_{i:02}");
        let ts = ctx.prepared.dataset.timestamp(p.point.slice, p.point.t);
        let stamp = chrono::DateTime::from_timestamp(ts, 0)
            .map(|dt| dt.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
            .unwrap_or_else(|| ts.to_string());
        let title = format!(
            "{} — slice {} row {} ({stamp})",
            report.method.name(),
            p.point.slice,
            p.point.t
        );
        let (svg, csv) =
            render_attribution(&p.attribution, task, ColorScale::Diverging, &title, &idir, &stem)
                .map_err(interpret_err)?;
        point_meta.push(json!({
            "index": i,
            "slice": p.point.slice,
            "t": p.point.t,
            "timestamp": stamp,
            "loss": p.loss,
            "target_cell": p.target_cell,
            "output_at_x": p.output_at_x,
            "output_at_baseline": p.output_at_baseline,
            "completeness_gap": p.completeness_gap,
            "csv": dir.relative(&csv),
            "svg": dir.relative(&svg),
        }));
        files.push(svg);
        files.push(csv);
    }

    let (imp_svg, imp_csv) = render_attribution(
        &importance.importance,
        task,
        ColorScale::Sequential,
        "mean |attribution| across points",
        &idir,
        "importance",
    )
    .map_err(interpret_err)?;

    let summary = json!({
        "model": config.model_name,
        "method": report.method,
        "target": report.target,
        "baseline": report.baseline,
        "baseline_descriptor": report.baseline.descriptor(),
        "ig_steps": report.ig_steps,
        "selection": config.request.selection,
        "points": point_meta,
        "importance": {
            "per_delay": importance.per_delay,
            "per_component": importance.per_component,
            "csv": dir.relative(&imp_csv),
            "svg": dir.relative(&imp_svg),
        },
    });
    write_json(&files[1], &summary)?;
    files.push(imp_svg);
    files.push(imp_csv);

    let mut record = RunRecord::new("interpret");
    record.config_digest = Some(sha256_hex(text.as_bytes()));
    record
        .input_digests
        .insert("dataset".to_string(), ctx.checkpoint.dataset_digest.clone());
    record.outputs = vec![dir.relative(&idir)];
    dir.append_run(&record)?;

    Ok(InterpretSummary {
        model: config.model_name,
        tag: config.tag,
        dir: idir,
        method: report.method,
        n_points: report.points.len(),
        files,
    })
}

// ---------------------------------------------------------------------------
// verify

/// The verifier's findings: per-artifact confirmations and any issues.
#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    /// Number of artifacts checked.
    pub checked: usize,
    /// Human-readable confirmations, one per artifact.
    pub details: Vec<String>,
    /// Detected inconsistencies; empty means the directory is consistent.
    pub issues: Vec<String>,
}

impl VerifyReport {
    pub fn is_consistent(&self) -> bool {
        self.issues.is_empty()
    }

    fn ok(&mut self, msg: String) {
        self.checked += 1;
        self.details.push(msg);
    }

    fn issue(&mut self, msg: String) {
        self.checked += 1;
        self.issues.push(msg);
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self.details.iter().map(|d| format!("ok: {d}")).collect();
        out.extend(self.issues.iter().map(|i| format!("issue: {i}")));
        out.push(format!(
            "checked {} artifact(s): {}",
            self.checked,
            if self.is_consistent() {
                "consistent".to_string()
            } else {
                format!("{} issue(s)", self.issues.len())
            }
        ));
        out
    }
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Walks the experiment directory and cross-checks every artifact: datasets
/// load and validate, checkpoints match their digests, model configs match
/// their checkpoints and datasets, sweep reports and interpretation files
/// parse.
pub fn cmd_verify(root: &Path) -> Result<VerifyReport, ExperimentError> {
    let dir = ExperimentDir::open(root)?;
    let _lock = dir.lock()?;
    let mut rep = VerifyReport::default();

    match dir.runs() {
        Ok(runs) => rep.ok(format!("runs.jsonl: {} record(s)", runs.len())),
        Err(e) => rep.issue(format!("runs.jsonl: {e}")),
    }

    match load_registry(&dir) {
        Ok(registry) => rep.ok(format!(
            "custom_archs: registry loads ({})",
            registry.names().join(", ")
        )),
        Err(e) => rep.issue(format!("custom_archs: {e}")),
    }

    let mut datasets: BTreeMap<String, TimeSeriesDataset> = BTreeMap::new();
    for ds_dir in sorted_dirs(&dir.datasets_dir()) {
        let name = dir_name(&ds_dir);
        match load_dataset(&ds_dir).and_then(|ds| ds.validate().map(|()| ds)) {
            Ok(ds) => {
                rep.ok(format!(
                    "dataset {name}: {} rows, {} slice(s), digest {}",
                    ds.n_total(),
                    ds.slices.len(),
                    dataset_digest(&ds)
                ));
                datasets.insert(name, ds);
            }
            Err(e) => rep.issue(format!("dataset {name}: {e}")),
        }
    }

    for mdir in sorted_dirs(&dir.models_dir()) {
        let name = dir_name(&mdir);
        verify_model(&mut rep, &name, &mdir, &datasets);
    }

    Ok(rep)
}

fn verify_model(
    rep: &mut VerifyReport,
    name: &str,
    mdir: &Path,
    datasets: &BTreeMap<String, TimeSeriesDataset>,
) {
    // sweep reports and interpretations are checked even when the
    // checkpoint itself is damaged
    for sweep_dir in sorted_dirs(&mdir.join("sweeps")) {
        let tag = dir_name(&sweep_dir);
        let path = sweep_dir.join("report.jsonl");
        match fs::read_to_string(&path) {
            Ok(text) => {
                let parsed: Result<Vec<TrialRecord>, _> =
                    text.lines().map(serde_json::from_str).collect();
                match parsed {
                    Ok(trials) => rep.ok(format!(
                        "model {name} sweep {tag}: {} trial record(s)",
                        trials.len()
                    )),
                    Err(e) => rep.issue(format!("model {name} sweep {tag}: {e}")),
                }
            }
            Err(e) => rep.issue(format!("model {name} sweep {tag}: {e}")),
        }
    }

    for idir in sorted_dirs(&mdir.join("interpretations")) {
        let tag = dir_name(&idir);
        verify_interpretation(rep, name, &tag, &idir);
    }

    let ck_path = mdir.join("checkpoint.json");
    if !ck_path.is_file() {
        rep.issue(format!("model {name}: no checkpoint.json"));
        return;
    }
    let ck = match load_checkpoint(mdir) {
        Ok(ck) => ck,
        Err(e) => {
            rep.issue(format!("model {name}: {e}"));
            return;
        }
    };
    rep.ok(format!(
        "model {name}: checkpoint loads ({} at best epoch {})",
        ck.arch.arch_name, ck.best_epoch
    ));

    let config_path = mdir.join("config.json");
    let config: TrainCommandConfig = match fs::read_to_string(&config_path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(c) => c,
        Err(e) => {
            rep.issue(format!("model {name}: config.json: {e}"));
            return;
        }
    };
    if config.arch != ck.arch
        || config.train != ck.config
        || config.task != ck.task
        || config.dataset != ck.dataset_name
    {
        rep.issue(format!(
            "model {name}: config.json does not match the checkpoint"
        ));
        return;
    }
    rep.ok(format!("model {name}: config.json matches the checkpoint"));

    let Some(ds) = datasets.get(&config.dataset) else {
        rep.issue(format!(
            "model {name}: references dataset {:?}, which is missing",
            config.dataset
        ));
        return;
    };
    if dataset_digest(ds) != ck.dataset_digest {
        rep.issue(format!(
            "model {name}: dataset {:?} does not match the digest recorded at training",
            config.dataset
        ));
        return;
    }
    match crate::timebase::PreparedTask::prepare(ds.clone(), config.task.clone(), &config.prepare)
    {
        Ok(prepared) => {
            if split_digest(&prepared.split) != ck.split.digest {
                rep.issue(format!(
                    "model {name}: re-prepared split does not match the recorded digest"
                ));
            } else if prepared.scaler != ck.scaler {
                rep.issue(format!(
                    "model {name}: re-fitted scaler does not match the checkpoint"
                ));
            } else {
                rep.ok(format!(
                    "model {name}: dataset, split, and scaler digests are consistent"
                ));
            }
        }
        Err(e) => rep.issue(format!("model {name}: cannot re-prepare the task: {e}")),
    }

    // derived evaluation reports must at least be valid JSON
    if let Ok(entries) = fs::read_dir(mdir) {
        let mut evals: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy())
                    .is_some_and(|n| n.starts_with("eval_") && n.ends_with(".json"))
            })
            .collect();
        evals.sort();
        for path in evals {
            let file = dir_name(&path);
            match fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| {
                    serde_json::from_str::<serde_json::Value>(&t).map_err(|e| e.to_string())
                }) {
                Ok(_) => rep.ok(format!("model {name}: {file} parses")),
                Err(e) => rep.issue(format!("model {name}: {file}: {e}")),
            }
        }
    }
}

fn verify_interpretation(rep: &mut VerifyReport, model: &str, tag: &str, idir: &Path) {
    let request_path = idir.join("request.json");
    match fs::read_to_string(&request_path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str::<AttributionRequest>(&t).map_err(|e| e.to_string()))
    {
        Ok(_) => rep.ok(format!(
            "model {model} interpretation {tag}: request.json parses"
        )),
        Err(e) => rep.issue(format!(
            "model {model} interpretation {tag}: request.json: {e}"
        )),
    }
    match fs::read_to_string(idir.join("summary.json"))
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).map_err(|e| e.to_string()))
    {
        Ok(_) => {}
        Err(e) => rep.issue(format!(
            "model {model} interpretation {tag}: summary.json: {e}"
        )),
    }

    let Ok(entries) = fs::read_dir(idir) else {
        rep.issue(format!("model {model} interpretation {tag}: unreadable"));
        return;
    };
    let mut csvs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    csvs.sort();
    for path in csvs {
        let file = dir_name(&path);
        match fs::read_to_string(&path) {
            Ok(text) => match parse_attribution_csv(&text) {
                Ok(_) => rep.ok(format!("model {model} interpretation {tag}: {file} parses")),
                Err(e) => rep.issue(format!(
                    "model {model} interpretation {tag}: {file}: {e}"
                )),
            },
            Err(e) => rep.issue(format!("model {model} interpretation {tag}: {file}: {e}")),
        }
    }
}

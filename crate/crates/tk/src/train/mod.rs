//! Mini-batch training with early stopping and checkpointing, stateful
//! chronological batching, raw-unit evaluation metrics, and hyperparameter
//! sweeps with consolidation.
//!
//! Losses are computed on scaled targets (stabilizing training); every
//! reported metric is in raw units. Early stopping tracks the validation
//! loss and restores the best epoch's parameters.

mod batch;
mod checkpoint;
mod metrics;
mod optim;
mod sweep;

pub use batch::{make_batches, Batch};
pub use checkpoint::{
    dataset_digest, load_checkpoint, save_checkpoint, sha256_hex, split_digest, Checkpoint,
    SplitSummary,
};
pub use metrics::{ComponentMetrics, Metrics, PointLoss};
pub use optim::{Optimizer, OptimizerKind};
pub use sweep::{sweep, sweep_with, write_report_jsonl, SweepConfig, SweepReport, TrialRecord};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, ArchSpec, ForwardOptions, Model, Registry};
use crate::matrix::Matrix;
use crate::tensor::{Tape, Tensor, TensorError, VarId};
use crate::timebase::{PredictionPoint, PreparedTask, Split, TaskKind, TimebaseError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the training split is empty")]
    EmptyTrainSplit,
    #[error("the {0:?} split has no points")]
    EmptySplit(Split),
    #[error("non-finite loss at epoch {epoch} ({context}); lower the learning rate or check the data")]
    NonFiniteLoss { epoch: usize, context: String },
    #[error("unknown split {0:?}; expected one of train, val, eval")]
    UnknownSplit(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Timebase(#[from] TimebaseError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Training objective. Regression tasks use `mse` or `mae`; classification
/// tasks must use `cross_entropy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Adam moment decays.
    pub betas: (f64, f64),
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Seeds parameter init, shuffling, and dropout.
    pub seed: u64,
    /// Carry recurrent state across chronological batches.
    pub stateful: bool,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            stateful: false,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, kind: &TaskKind) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::Config(msg.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive and finite");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail("betas must lie in [0, 1)");
        }
        if self.stateful && self.shuffle {
            return fail("stateful training requires shuffle = false");
        }
        match kind {
            TaskKind::Classification { .. } if self.loss != LossKind::CrossEntropy => {
                fail("classification tasks require the cross_entropy loss")
            }
            TaskKind::Regression if self.loss == LossKind::CrossEntropy => {
                fail("cross_entropy requires a classification task")
            }
            _ => Ok(()),
        }
    }
}

/// One row of the training curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss, scaled-target space.
    pub train_loss: f64,
    /// Validation loss, scaled-target space (falls back to the training
    /// split when validation is empty).
    pub val_loss: f64,
    /// Raw-unit validation metric: MSE for regression, accuracy for
    /// classification.
    pub val_metric: f64,
}

/// Instrumentation events emitted during training.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    /// Fires before each batch is processed.
    Batch {
        epoch: usize,
        index: usize,
        slice: usize,
        size: usize,
        /// Recurrent state was cleared before this batch.
        reset: bool,
    },
    Epoch(EpochRecord),
}

pub trait TrainObserver {
    fn on_event(&mut self, _event: &TrainEvent) {}
}

/// The no-op observer.
impl TrainObserver for () {}

pub fn parse_split(s: &str) -> Result<Split, TrainError> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "eval" => Ok(Split::Eval),
        other => Err(TrainError::UnknownSplit(other.to_string())),
    }
}

fn metric_name(kind: &TaskKind) -> &'static str {
    match kind {
        TaskKind::Regression => "val_mse_raw",
        TaskKind::Classification { .. } => "val_accuracy",
    }
}

/// Builds the scalar loss node for one batch on the caller's tape.
fn tape_loss(
    tape: &mut Tape,
    out: VarId,
    y: &Tensor,
    kind: LossKind,
) -> Result<VarId, TensorError> {
    match kind {
        LossKind::Mse => {
            let target = tape.constant(y.clone());
            let d = tape.sub(out, target)?;
            let sq = tape.mul(d, d)?;
            Ok(tape.mean(sq))
        }
        LossKind::Mae => {
            let target = tape.constant(y.clone());
            let d = tape.sub(out, target)?;
            let a = tape.abs(d);
            Ok(tape.mean(a))
        }
        LossKind::CrossEntropy => {
            let b = y.shape[0];
            let k = *y.shape.last().expect("non-empty shape");
            let logits = tape.reshape(out, &[b, k])?;
            let lsm = tape.log_softmax_rows(logits)?;
            let onehot = tape.constant(Tensor::from_vec(&[b, k], y.data.clone()));
            let picked = tape.mul(lsm, onehot)?;
            let total = tape.sum(picked);
            Ok(tape.scale(total, -1.0 / b as f64))
        }
    }
}

/// Forward passes a point list in batches; returns one scaled output matrix
/// per point.
pub(crate) fn forward_scaled(
    model: &mut Model,
    prepared: &PreparedTask,
    points: &[PredictionPoint],
    batch_size: usize,
) -> Result<Vec<Matrix>, TrainError> {
    let (r, c) = (model.shapes.out_rows, model.shapes.out_cols);
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(batch_size.max(1)) {
        let (x, _) = prepared.batch(chunk)?;
        let y = model.predict(&x)?;
        for b in 0..chunk.len() {
            let start = b * r * c;
            out.push(Matrix {
                rows: r,
                cols: c,
                data: y.data[start..start + r * c].to_vec(),
            });
        }
    }
    Ok(out)
}

fn scaled_targets(
    prepared: &PreparedTask,
    points: &[PredictionPoint],
) -> Result<Vec<Matrix>, TrainError> {
    points
        .iter()
        .map(|&p| Ok(prepared.window(p)?.y))
        .collect()
}

/// Scaled-space mean loss of the model over a point list.
fn split_loss(
    model: &mut Model,
    prepared: &PreparedTask,
    points: &[PredictionPoint],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let preds = forward_scaled(model, prepared, points, config.batch_size)?;
    let targets = scaled_targets(prepared, points)?;
    Ok(metrics::mean_loss(&preds, &targets, config.loss))
}

/// Raw-unit headline metric (MSE or accuracy) over a point list.
fn split_metric(
    model: &mut Model,
    prepared: &PreparedTask,
    points: &[PredictionPoint],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let preds = forward_scaled(model, prepared, points, config.batch_size)?;
    let targets = scaled_targets(prepared, points)?;
    let preds_raw: Vec<Matrix> = preds.iter().map(|m| prepared.output_to_raw(m)).collect();
    let targets_raw: Vec<Matrix> = targets.iter().map(|m| prepared.output_to_raw(m)).collect();
    let m = metrics::compute_metrics(
        &prepared.task.kind,
        &prepared.task.out_components,
        &preds_raw,
        &targets_raw,
    );
    Ok(match m {
        Metrics::Regression { mse, .. } => mse,
        Metrics::Classification { accuracy, .. } => accuracy,
    })
}

/// Trains with the default architecture registry and no observer.
pub fn train(
    prepared: &PreparedTask,
    arch: &ArchSpec,
    config: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    train_with(&Registry::with_defaults(), prepared, arch, config, &mut ())
}

/// Trains a model, early-stopping on validation loss, and returns the
/// checkpoint holding the best epoch's parameters.
///
/// When the validation split is empty, the training loss drives early
/// stopping instead.
pub fn train_with(
    registry: &Registry,
    prepared: &PreparedTask,
    arch: &ArchSpec,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint, TrainError> {
    config.validate(&prepared.task.kind)?;
    let train_points = prepared.points(Split::Train);
    if train_points.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let mut model = registry.build_for_task(arch, &prepared.task, config.seed)?;
    if config.stateful && !model.stateful {
        return Err(TrainError::Config(format!(
            "stateful training requires a state-carrying architecture; {:?} is not",
            model.spec.arch_name
        )));
    }

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x00D0_0FD0));
    let mut opt = Optimizer::new(config, &model.params);
    let val_points = prepared.points(Split::Val);

    let mut curves: Vec<EpochRecord> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_params: Vec<Tensor> = model.params.tensors.clone();
    let mut since_improvement = 0usize;

    for epoch in 0..config.max_epochs {
        let batches = make_batches(train_points, config, epoch);
        let mut loss_sum = 0.0;
        for (index, b) in batches.iter().enumerate() {
            if config.stateful {
                if b.reset {
                    model.reset_state()?;
                } else if let Some(st) = &model.state {
                    if b.points.len() < st.batch {
                        model.truncate_state(b.points.len())?;
                    }
                }
            }
            observer.on_event(&TrainEvent::Batch {
                epoch,
                index,
                slice: b.points[0].slice,
                size: b.points.len(),
                reset: config.stateful && b.reset,
            });

            let (x, y) = prepared.batch(&b.points)?;
            let mut tape = Tape::new();
            let opts = ForwardOptions {
                carry_state: config.stateful,
                collect_taps: false,
            };
            let pass = model.forward_on_tape(&mut tape, &x, opts, Some(&mut dropout_rng))?;
            let loss = tape_loss(&mut tape, pass.output, &y, config.loss)?;
            let loss_value = tape.value(loss).data[0];
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    context: format!("training batch {index}"),
                });
            }
            loss_sum += loss_value;

            let grads = tape.backward(loss)?;
            let gs: Vec<&[f64]> = pass.param_vars.iter().map(|&v| grads.wrt(v)).collect();
            opt.step(&mut model.params, &gs);
            if config.stateful {
                model.detach_state()?;
            }
        }
        let train_loss = loss_sum / batches.len() as f64;

        let stop_points = if val_points.is_empty() {
            train_points
        } else {
            val_points
        };
        let val_loss = split_loss(&mut model, prepared, stop_points, config)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                context: "validation".into(),
            });
        }
        let val_metric = split_metric(&mut model, prepared, stop_points, config)?;

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        };
        observer.on_event(&TrainEvent::Epoch(record.clone()));
        curves.push(record);

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = model.params.tensors.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement > config.patience {
                break;
            }
        }
    }

    model.params.tensors = best_params;
    Ok(Checkpoint {
        arch: arch.clone(),
        task: prepared.task.clone(),
        config: config.clone(),
        scaler: prepared.scaler.clone(),
        dataset_name: prepared.dataset.name.clone(),
        dataset_digest: dataset_digest(&prepared.dataset),
        split: SplitSummary {
            fractions: prepared.split.fractions,
            mode: prepared.split.mode,
            counts: [
                prepared.split.train.len(),
                prepared.split.val.len(),
                prepared.split.eval.len(),
            ],
            digest: split_digest(&prepared.split),
        },
        params: model.params.clone(),
        curves,
        best_epoch,
        best_val,
        val_metric_name: metric_name(&prepared.task.kind).into(),
        warnings: model.warnings.clone(),
    })
}

/// A split's evaluation: headline loss, raw-unit metrics, per-point losses.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub n_points: usize,
    /// Mean loss in scaled-target space (training's objective).
    pub loss_scaled: f64,
    pub metrics: Metrics,
    /// Raw-unit per-point losses, in point order.
    pub per_point: Vec<PointLoss>,
}

/// Evaluates an instantiated model on one split.
pub fn evaluate_model(
    model: &mut Model,
    prepared: &PreparedTask,
    split: Split,
    loss: LossKind,
    batch_size: usize,
) -> Result<EvalReport, TrainError> {
    let points = prepared.points(split);
    if points.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let preds = forward_scaled(model, prepared, points, batch_size)?;
    let targets = scaled_targets(prepared, points)?;
    let loss_scaled = metrics::mean_loss(&preds, &targets, loss);

    let preds_raw: Vec<Matrix> = preds.iter().map(|m| prepared.output_to_raw(m)).collect();
    let targets_raw: Vec<Matrix> = targets.iter().map(|m| prepared.output_to_raw(m)).collect();
    let split_metrics = metrics::compute_metrics(
        &prepared.task.kind,
        &prepared.task.out_components,
        &preds_raw,
        &targets_raw,
    );
    let per_point = points
        .iter()
        .zip(preds_raw.iter().zip(&targets_raw))
        .map(|(&point, (p, t))| PointLoss {
            point,
            loss: metrics::point_loss(p, t, loss),
        })
        .collect();

    Ok(EvalReport {
        split,
        n_points: points.len(),
        loss_scaled,
        metrics: split_metrics,
        per_point,
    })
}

/// Restores the checkpointed model and evaluates it on one split.
pub fn evaluate(
    registry: &Registry,
    ck: &Checkpoint,
    prepared: &PreparedTask,
    split: Split,
) -> Result<EvalReport, TrainError> {
    let mut model = ck.instantiate(registry)?;
    evaluate_model(
        &mut model,
        prepared,
        split,
        ck.config.loss,
        ck.config.batch_size,
    )
}

/// One point's prediction in raw units.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub point: PredictionPoint,
    /// Regression: inverse-scaled outputs. Classification: logits.
    pub output_raw: Matrix,
    pub target_raw: Matrix,
    /// Softmax class probabilities (classification only).
    pub probabilities: Option<Vec<f64>>,
    /// Argmax class label (classification only).
    pub label: Option<usize>,
}

/// Predicts a list of points with an instantiated model.
pub fn predict_model(
    model: &mut Model,
    prepared: &PreparedTask,
    points: &[PredictionPoint],
    batch_size: usize,
) -> Result<Vec<Prediction>, TrainError> {
    let preds = forward_scaled(model, prepared, points, batch_size)?;
    let classification = prepared.task.kind.is_classification();
    points
        .iter()
        .zip(preds)
        .map(|(&point, out)| {
            let target_raw = prepared.raw_window(point)?.y;
            let output_raw = prepared.output_to_raw(&out);
            let (probabilities, label) = if classification {
                let ls = metrics::log_softmax(&out.data);
                (
                    Some(ls.iter().map(|v| v.exp()).collect::<Vec<f64>>()),
                    Some(metrics::argmax(&out.data)),
                )
            } else {
                (None, None)
            };
            Ok(Prediction {
                point,
                output_raw,
                target_raw,
                probabilities,
                label,
            })
        })
        .collect()
}

/// Restores the checkpointed model and predicts the given points.
pub fn predict_points(
    registry: &Registry,
    ck: &Checkpoint,
    prepared: &PreparedTask,
    points: &[PredictionPoint],
) -> Result<Vec<Prediction>, TrainError> {
    let mut model = ck.instantiate(registry)?;
    predict_model(&mut model, prepared, points, ck.config.batch_size)
}

//! Evaluation metrics (always in raw units) and per-point losses.

use serde::{Deserialize, Serialize};

use super::LossKind;
use crate::matrix::Matrix;
use crate::timebase::{PredictionPoint, TaskKind};

/// Raw-unit error breakdown for one output component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMetrics {
    pub component: String,
    pub mse: f64,
    pub mae: f64,
}

/// Split-level metrics; regression errors are in raw (un-scaled) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metrics {
    Regression {
        mse: f64,
        mae: f64,
        per_component: Vec<ComponentMetrics>,
    },
    Classification {
        accuracy: f64,
        macro_f1: f64,
        cross_entropy: f64,
        /// confusion[true][predicted]
        confusion: Vec<Vec<usize>>,
    },
}

/// One prediction point's loss (raw units), for ranking and selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLoss {
    pub point: PredictionPoint,
    pub loss: f64,
}

/// Numerically stable log-softmax of one logit row.
pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One point's loss. Regression: mean squared (or absolute) error over the
/// output cells. Classification: cross-entropy of the one-hot target in
/// nats, computed from the logits.
pub(crate) fn point_loss(pred: &Matrix, target: &Matrix, kind: LossKind) -> f64 {
    match kind {
        LossKind::Mse => {
            let n = pred.data.len() as f64;
            pred.data
                .iter()
                .zip(&target.data)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n
        }
        LossKind::Mae => {
            let n = pred.data.len() as f64;
            pred.data
                .iter()
                .zip(&target.data)
                .map(|(p, t)| (p - t).abs())
                .sum::<f64>()
                / n
        }
        LossKind::CrossEntropy => {
            let label = argmax(&target.data);
            -log_softmax(&pred.data)[label]
        }
    }
}

/// Mean loss over a split; the same quantity training tracks, computed on
/// whatever unit space the matrices are in.
pub(crate) fn mean_loss(preds: &[Matrix], targets: &[Matrix], kind: LossKind) -> f64 {
    let n = preds.len().max(1) as f64;
    preds
        .iter()
        .zip(targets)
        .map(|(p, t)| point_loss(p, t, kind))
        .sum::<f64>()
        / n
}

/// Full split metrics from raw-unit predictions and targets.
///
/// Regression matrices are (out_rows × out_cols) with one column per output
/// component, in `out_names` order. Classification matrices are (1 × K):
/// predictions hold logits, targets a one-hot label.
pub(crate) fn compute_metrics(
    kind: &TaskKind,
    out_names: &[String],
    preds: &[Matrix],
    targets: &[Matrix],
) -> Metrics {
    match kind {
        TaskKind::Regression => {
            let n_comp = out_names.len();
            let mut se = vec![0.0; n_comp];
            let mut ae = vec![0.0; n_comp];
            let mut count = vec![0usize; n_comp];
            for (p, t) in preds.iter().zip(targets) {
                for r in 0..p.rows {
                    for c in 0..p.cols {
                        let d = p.get(r, c) - t.get(r, c);
                        se[c] += d * d;
                        ae[c] += d.abs();
                        count[c] += 1;
                    }
                }
            }
            let per_component: Vec<ComponentMetrics> = out_names
                .iter()
                .enumerate()
                .map(|(c, name)| ComponentMetrics {
                    component: name.clone(),
                    mse: se[c] / count[c].max(1) as f64,
                    mae: ae[c] / count[c].max(1) as f64,
                })
                .collect();
            let total = count.iter().sum::<usize>().max(1) as f64;
            Metrics::Regression {
                mse: se.iter().sum::<f64>() / total,
                mae: ae.iter().sum::<f64>() / total,
                per_component,
            }
        }
        TaskKind::Classification { n_classes } => {
            let k = *n_classes;
            let mut confusion = vec![vec![0usize; k]; k];
            let mut ce = 0.0;
            for (p, t) in preds.iter().zip(targets) {
                let truth = argmax(&t.data);
                let pred = argmax(&p.data);
                confusion[truth][pred] += 1;
                ce -= log_softmax(&p.data)[truth];
            }
            let n = preds.len().max(1) as f64;
            let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
            let mut f1_sum = 0.0;
            for class in 0..k {
                let tp = confusion[class][class];
                let fp: usize = (0..k)
                    .filter(|&i| i != class)
                    .map(|i| confusion[i][class])
                    .sum();
                let fn_: usize = (0..k)
                    .filter(|&j| j != class)
                    .map(|j| confusion[class][j])
                    .sum();
                let denom = 2 * tp + fp + fn_;
                if denom > 0 {
                    f1_sum += 2.0 * tp as f64 / denom as f64;
                }
            }
            Metrics::Classification {
                accuracy: correct as f64 / n,
                macro_f1: f1_sum / k as f64,
                cross_entropy: ce / n,
                confusion,
            }
        }
    }
}

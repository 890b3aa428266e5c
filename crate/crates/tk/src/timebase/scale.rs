//! Per-component z-score scaling fitted on the train split.

use super::{PredictionPoint, TaskKind, TaskSpec, TimeSeriesDataset};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Train-split z-score statistics, indexed by dataset component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    /// Population standard deviations; 1.0 where flagged zero-variance.
    pub stds: Vec<f64>,
    /// Components whose train rows had zero variance (std forced to 1).
    pub zero_variance: Vec<bool>,
    pub scale_inputs: bool,
    /// Applies to regression outputs; classification labels are never scaled.
    pub scale_outputs: bool,
}

impl ScalerParams {
    /// Identity scaler (all means 0, stds 1, nothing flagged).
    pub fn identity(n_components: usize) -> Self {
        Self {
            means: vec![0.0; n_components],
            stds: vec![1.0; n_components],
            zero_variance: vec![false; n_components],
            scale_inputs: true,
            scale_outputs: true,
        }
    }

    pub fn apply_value(&self, comp: usize, v: f64) -> f64 {
        (v - self.means[comp]) / self.stds[comp]
    }

    pub fn invert_value(&self, comp: usize, v: f64) -> f64 {
        v * self.stds[comp] + self.means[comp]
    }

    fn map(&self, m: &Matrix, comps: &[usize], f: impl Fn(usize, f64) -> f64) -> Matrix {
        debug_assert_eq!(m.cols, comps.len());
        let mut out = m.clone();
        for r in 0..m.rows {
            for (col, &comp) in comps.iter().enumerate() {
                out.set(r, col, f(comp, m.get(r, col)));
            }
        }
        out
    }

    /// Scales an input window whose columns carry the given component indices.
    pub fn apply_inputs(&self, m: &Matrix, comps: &[usize]) -> Matrix {
        if !self.scale_inputs {
            return m.clone();
        }
        self.map(m, comps, |c, v| self.apply_value(c, v))
    }

    pub fn invert_inputs(&self, m: &Matrix, comps: &[usize]) -> Matrix {
        if !self.scale_inputs {
            return m.clone();
        }
        self.map(m, comps, |c, v| self.invert_value(c, v))
    }

    /// Scales a regression output window.
    pub fn apply_outputs(&self, m: &Matrix, comps: &[usize]) -> Matrix {
        if !self.scale_outputs {
            return m.clone();
        }
        self.map(m, comps, |c, v| self.apply_value(c, v))
    }

    /// Returns a regression output window to raw units.
    pub fn invert_outputs(&self, m: &Matrix, comps: &[usize]) -> Matrix {
        if !self.scale_outputs {
            return m.clone();
        }
        self.map(m, comps, |c, v| self.invert_value(c, v))
    }
}

/// Fits per-component statistics on exactly the dataset rows the train
/// split's windows touch: input-window rows for input components, output-
/// window rows for regression output components (union where a component
/// serves both). Rows a pad policy would synthesize are not dataset rows
/// and contribute nothing.
pub fn fit_scaler(
    ds: &TimeSeriesDataset,
    task: &TaskSpec,
    train_points: &[PredictionPoint],
) -> ScalerParams {
    let n = ds.n_components();
    let mut rows_of: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n];

    let mut collect = |comps: &[usize], delays: (i64, i64)| {
        for p in train_points {
            let len = ds.slices[p.slice].len() as i64;
            for delay in delays.0..=delays.1 {
                let idx = p.t as i64 + delay;
                if idx >= 0 && idx < len {
                    for &comp in comps {
                        rows_of[comp].insert((p.slice, idx as usize));
                    }
                }
            }
        }
    };
    collect(&task.in_indices(ds), task.in_delays);
    if task.kind == TaskKind::Regression {
        collect(&task.out_indices(ds), task.out_delays);
    }

    let mut means = vec![0.0; n];
    let mut stds = vec![1.0; n];
    let mut zero_variance = vec![false; n];
    for comp in 0..n {
        let rows = &rows_of[comp];
        if rows.is_empty() {
            continue;
        }
        let count = rows.len() as f64;
        let mean = rows
            .iter()
            .map(|&(s, r)| ds.value(s, r, comp))
            .sum::<f64>()
            / count;
        let var = rows
            .iter()
            .map(|&(s, r)| {
                let d = ds.value(s, r, comp) - mean;
                d * d
            })
            .sum::<f64>()
            / count;
        means[comp] = mean;
        if var == 0.0 {
            zero_variance[comp] = true;
            stds[comp] = 1.0;
        } else {
            stds[comp] = var.sqrt();
        }
    }

    ScalerParams {
        means,
        stds,
        zero_variance,
        scale_inputs: true,
        scale_outputs: true,
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::dataset_from_columns;
    use super::*;
    use crate::timebase::{EdgePolicy, enumerate_prediction_points, ComponentRole::Both};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn identity_task() -> TaskSpec {
        TaskSpec {
            in_delays: (0, 0),
            in_components: vec!["x".into()],
            out_delays: (0, 0),
            out_components: vec!["x".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        }
    }

    #[test]
    fn population_stats_of_two_values() {
        // train values {0, 2}: mean 1, population std 1; apply(3) = 2
        let ds = dataset_from_columns(60, &[("x", Both)], &[(0, vec![vec![0.0], vec![2.0]])]);
        let task = identity_task();
        let pts = enumerate_prediction_points(&ds, &task).unwrap();
        let sc = fit_scaler(&ds, &task, &pts);
        assert_eq!(sc.means[0], 1.0);
        assert_eq!(sc.stds[0], 1.0);
        assert!(!sc.zero_variance[0]);
        assert_eq!(sc.apply_value(0, 3.0), 2.0);
    }

    #[test]
    fn constant_component_is_flagged() {
        let ds = dataset_from_columns(
            60,
            &[("x", Both)],
            &[(0, vec![vec![5.0], vec![5.0], vec![5.0]])],
        );
        let task = identity_task();
        let pts = enumerate_prediction_points(&ds, &task).unwrap();
        let sc = fit_scaler(&ds, &task, &pts);
        assert!(sc.zero_variance[0]);
        assert_eq!(sc.stds[0], 1.0);
        assert_eq!(sc.apply_value(0, 5.0), 0.0);
    }

    #[test]
    fn round_trip_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random::<f64>() * 100.0 - 50.0, rng.random::<f64>()])
            .collect();
        let ds = dataset_from_columns(60, &[("x", Both), ("y", Both)], &[(0, rows)]);
        let task = TaskSpec {
            in_delays: (-2, 0),
            in_components: vec!["x".into(), "y".into()],
            out_delays: (1, 1),
            out_components: vec!["y".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        let pts = enumerate_prediction_points(&ds, &task).unwrap();
        let sc = fit_scaler(&ds, &task, &pts);
        let m = Matrix::from_rows(&[vec![3.25, -7.5], vec![0.0, 42.0]]);
        let back = sc.invert_inputs(&sc.apply_inputs(&m, &[0, 1]), &[0, 1]);
        assert!(back.max_abs_diff(&m) < 1e-9);
    }

    #[test]
    fn scaled_train_rows_have_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random::<f64>() * 10.0 + 3.0])
            .collect();
        let ds = dataset_from_columns(60, &[("x", Both)], &[(0, rows)]);
        let task = identity_task();
        let pts = enumerate_prediction_points(&ds, &task).unwrap();
        let sc = fit_scaler(&ds, &task, &pts);
        let scaled: Vec<f64> = pts
            .iter()
            .map(|p| sc.apply_value(0, ds.value(p.slice, p.t, 0)))
            .collect();
        let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
        let var = scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / scaled.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn output_scaling_can_be_disabled() {
        let ds = dataset_from_columns(60, &[("x", Both)], &[(0, vec![vec![0.0], vec![2.0]])]);
        let task = identity_task();
        let pts = enumerate_prediction_points(&ds, &task).unwrap();
        let mut sc = fit_scaler(&ds, &task, &pts);
        sc.scale_outputs = false;
        let m = Matrix::from_rows(&[vec![3.0]]);
        assert_eq!(sc.apply_outputs(&m, &[0]).get(0, 0), 3.0);
        assert_eq!(sc.apply_inputs(&m, &[0]).get(0, 0), 2.0);
    }
}

//! Binding a dataset to a task: enumerated points, split, and fitted scaler,
//! packaged so downstream consumers (training, evaluation, attribution) can
//! materialize supervised batches without repeating the preparation steps.

use serde::{Deserialize, Serialize};

use super::{
    build_window_pair, enumerate_prediction_points, fit_scaler, split_points, subsample,
    PredictionPoint, ScalerParams, Split, SplitAssignment, SplitMode, TaskSpec,
    TimeSeriesDataset, TimebaseError, WindowPair,
};
use crate::matrix::Matrix;
use crate::tensor::Tensor;

/// Knobs for [`PreparedTask::prepare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareOptions {
    /// (train, val, eval) fractions; must sum to 1.
    pub fractions: (f64, f64, f64),
    pub split_mode: SplitMode,
    pub scale_inputs: bool,
    pub scale_outputs: bool,
    /// Keep every `stride`-th prediction point (1 keeps all).
    pub stride: usize,
    /// Cap on the total number of prediction points.
    pub limit: Option<usize>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            fractions: (0.6, 0.2, 0.2),
            split_mode: SplitMode::default(),
            scale_inputs: true,
            scale_outputs: true,
            stride: 1,
            limit: None,
        }
    }
}

/// A dataset bound to a task: points enumerated, split assigned, scaler
/// fitted on the training portion.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub dataset: TimeSeriesDataset,
    pub task: TaskSpec,
    pub scaler: ScalerParams,
    pub split: SplitAssignment,
}

impl PreparedTask {
    pub fn prepare(
        dataset: TimeSeriesDataset,
        task: TaskSpec,
        opts: &PrepareOptions,
    ) -> Result<Self, TimebaseError> {
        let points = enumerate_prediction_points(&dataset, &task)?;
        let points = subsample(&points, opts.stride, opts.limit);
        if points.is_empty() {
            return Err(TimebaseError::EmptyTask);
        }
        let split = split_points(&points, opts.fractions, opts.split_mode)?;
        let mut scaler = fit_scaler(&dataset, &task, &split.train);
        scaler.scale_inputs = opts.scale_inputs;
        scaler.scale_outputs = opts.scale_outputs;
        Ok(Self {
            dataset,
            task,
            scaler,
            split,
        })
    }

    pub fn points(&self, split: Split) -> &[PredictionPoint] {
        self.split.of(split)
    }

    /// The scaled (X, Y) pair for one point.
    pub fn window(&self, point: PredictionPoint) -> Result<WindowPair, TimebaseError> {
        build_window_pair(&self.dataset, point, &self.task, Some(&self.scaler))
    }

    /// The raw-unit (X, Y) pair for one point (edge policy applied, no scaling).
    pub fn raw_window(&self, point: PredictionPoint) -> Result<WindowPair, TimebaseError> {
        build_window_pair(&self.dataset, point, &self.task, None)
    }

    /// Stacks points into an input tensor (B, L_in, c_in) and a scaled
    /// target tensor (B, out_rows, out_cols).
    pub fn batch(&self, points: &[PredictionPoint]) -> Result<(Tensor, Tensor), TimebaseError> {
        let b = points.len();
        let (l_in, c_in) = (self.task.l_in(), self.task.in_indices(&self.dataset).len());
        let (r, c) = (self.task.out_rows(), self.task.out_cols());
        let mut xd = Vec::with_capacity(b * l_in * c_in);
        let mut yd = Vec::with_capacity(b * r * c);
        for &p in points {
            let w = self.window(p)?;
            xd.extend_from_slice(&w.x.data);
            yd.extend_from_slice(&w.y.data);
        }
        Ok((
            Tensor::from_vec(&[b, l_in, c_in], xd),
            Tensor::from_vec(&[b, r, c], yd),
        ))
    }

    /// Maps a model output matrix back to raw units (regression outputs are
    /// inverse-scaled; classification logits pass through untouched).
    pub fn output_to_raw(&self, out: &Matrix) -> Matrix {
        if self.task.kind.is_classification() {
            return out.clone();
        }
        self.scaler
            .invert_outputs(out, &self.task.out_indices(&self.dataset))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::dataset_from_columns;
    use super::super::{ComponentRole, EdgePolicy, TaskKind};
    use super::*;

    fn small_prepared() -> PreparedTask {
        let rows: Vec<Vec<f64>> = (0..40).map(|r| vec![r as f64]).collect();
        let ds = dataset_from_columns(60, &[("x", ComponentRole::Both)], &[(0, rows)]);
        let task = TaskSpec {
            in_delays: (-2, 0),
            in_components: vec!["x".into()],
            out_delays: (1, 1),
            out_components: vec!["x".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        PreparedTask::prepare(ds, task, &PrepareOptions::default()).unwrap()
    }

    #[test]
    fn prepare_splits_and_scales() {
        let p = small_prepared();
        // rows 2..=38 are admissible anchors: 37 points, 0.6/0.2/0.2
        assert_eq!(p.split.len(), 37);
        assert_eq!(p.points(Split::Train).len(), 22);
        assert!(p.scaler.scale_inputs && p.scaler.scale_outputs);
    }

    #[test]
    fn batch_stacks_windows_in_order() {
        let p = small_prepared();
        let pts = p.points(Split::Train)[..3].to_vec();
        let (x, y) = p.batch(&pts).unwrap();
        assert_eq!(x.shape, vec![3, 3, 1]);
        assert_eq!(y.shape, vec![3, 1, 1]);
        let w1 = p.window(pts[1]).unwrap();
        assert_eq!(x.data[3..6], w1.x.data[..]);
        assert_eq!(y.data[1], w1.y.data[0]);
    }

    #[test]
    fn output_round_trips_to_raw_units() {
        let p = small_prepared();
        let pt = p.points(Split::Val)[0];
        let scaled = p.window(pt).unwrap().y;
        let raw = p.raw_window(pt).unwrap().y;
        let back = p.output_to_raw(&scaled);
        assert!(back.max_abs_diff(&raw) < 1e-12);
    }

    #[test]
    fn stride_and_limit_thin_the_points() {
        let rows: Vec<Vec<f64>> = (0..40).map(|r| vec![r as f64]).collect();
        let ds = dataset_from_columns(60, &[("x", ComponentRole::Both)], &[(0, rows)]);
        let task = TaskSpec {
            in_delays: (-2, 0),
            in_components: vec!["x".into()],
            out_delays: (1, 1),
            out_components: vec!["x".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        let opts = PrepareOptions {
            stride: 2,
            limit: Some(10),
            ..Default::default()
        };
        let p = PreparedTask::prepare(ds, task, &opts).unwrap();
        assert_eq!(p.split.len(), 10);
    }
}

//! Prediction-point enumeration and window-pair construction.

use super::{
    EdgePolicy, PredictionPoint, ScalerParams, TaskKind, TaskSpec, TimeSeriesDataset,
    TimebaseError,
};
use crate::matrix::Matrix;
use std::collections::BTreeSet;

/// One supervised sample anchored at a prediction point.
#[derive(Debug, Clone)]
pub struct WindowPair {
    pub point: PredictionPoint,
    /// L_in × c_in; row i holds the inputs at delay a + i.
    pub x: Matrix,
    /// Regression: L_out × c_out, row j at delay c + j.
    /// Classification: 1 × K one-hot of the label at delay c.
    pub y: Matrix,
    /// Input rows synthesized by the edge policy.
    pub padded_rows: BTreeSet<usize>,
    /// Output rows synthesized by the edge policy (regression only).
    pub padded_out_rows: BTreeSet<usize>,
}

/// Lists every prediction point the task admits, ordered by (slice, t).
///
/// Under `drop`, a point is admitted only if both windows lie entirely
/// inside its slice. Under the pad policies every in-slice row is a point
/// and missing rows are synthesized later by [`build_window_pair`].
pub fn enumerate_prediction_points(
    ds: &TimeSeriesDataset,
    task: &TaskSpec,
) -> Result<Vec<PredictionPoint>, TimebaseError> {
    task.validate(ds)?;
    let lo = task.in_delays.0.min(task.out_delays.0);
    let hi = task.in_delays.1.max(task.out_delays.1);
    let mut points = Vec::new();
    for (slice, s) in ds.slices.iter().enumerate() {
        let len = s.len() as i64;
        for t in 0..len {
            let admitted = match task.edge_policy {
                EdgePolicy::Drop => t + lo >= 0 && t + hi <= len - 1,
                EdgePolicy::PadZero | EdgePolicy::PadEdge => true,
            };
            if admitted {
                points.push(PredictionPoint {
                    slice,
                    t: t as usize,
                });
            }
        }
    }
    if points.is_empty() {
        return Err(TimebaseError::EmptyTask);
    }
    Ok(points)
}

/// Optional thinning of an enumerated point list: keep every `stride`-th
/// point (starting from the first), then truncate to `limit`.
pub fn subsample(
    points: &[PredictionPoint],
    stride: usize,
    limit: Option<usize>,
) -> Vec<PredictionPoint> {
    let stride = stride.max(1);
    let mut out: Vec<PredictionPoint> = points.iter().copied().step_by(stride).collect();
    if let Some(l) = limit {
        out.truncate(l);
    }
    out
}

/// Where a requested row landed relative to the slice.
enum RowRef {
    InRange(usize),
    PadZero,
    PadEdge(usize),
}

fn resolve_row(
    idx: i64,
    len: usize,
    policy: EdgePolicy,
    point: PredictionPoint,
) -> Result<RowRef, TimebaseError> {
    if idx >= 0 && (idx as usize) < len {
        return Ok(RowRef::InRange(idx as usize));
    }
    match policy {
        EdgePolicy::Drop => Err(TimebaseError::OutOfRange {
            slice: point.slice,
            t: point.t,
        }),
        EdgePolicy::PadZero => Ok(RowRef::PadZero),
        EdgePolicy::PadEdge => Ok(RowRef::PadEdge(if idx < 0 { 0 } else { len - 1 })),
    }
}

/// Builds the (X, Y) pair for one prediction point.
///
/// Rows are first assembled in raw units (synthesized rows per the edge
/// policy), then scaled column-wise if a scaler is given. Classification
/// labels are read at delay c and one-hot encoded, never scaled.
pub fn build_window_pair(
    ds: &TimeSeriesDataset,
    point: PredictionPoint,
    task: &TaskSpec,
    scaler: Option<&ScalerParams>,
) -> Result<WindowPair, TimebaseError> {
    let slice = &ds.slices[point.slice];
    let len = slice.len();
    let in_idx = task.in_indices(ds);
    let out_idx = task.out_indices(ds);

    let (a, _b) = task.in_delays;
    let (c, _d) = task.out_delays;

    let mut x = Matrix::zeros(task.l_in(), in_idx.len());
    let mut padded_rows = BTreeSet::new();
    for i in 0..task.l_in() {
        let idx = point.t as i64 + a + i as i64;
        match resolve_row(idx, len, task.edge_policy, point)? {
            RowRef::InRange(r) => {
                for (col, &comp) in in_idx.iter().enumerate() {
                    x.set(i, col, slice.values.get(r, comp));
                }
            }
            RowRef::PadZero => {
                padded_rows.insert(i);
            }
            RowRef::PadEdge(r) => {
                padded_rows.insert(i);
                for (col, &comp) in in_idx.iter().enumerate() {
                    x.set(i, col, slice.values.get(r, comp));
                }
            }
        }
    }
    if let Some(sc) = scaler {
        x = sc.apply_inputs(&x, &in_idx);
    }

    let mut padded_out_rows = BTreeSet::new();
    let y = match task.kind {
        TaskKind::Regression => {
            let mut y = Matrix::zeros(task.l_out(), out_idx.len());
            for j in 0..task.l_out() {
                let idx = point.t as i64 + c + j as i64;
                match resolve_row(idx, len, task.edge_policy, point)? {
                    RowRef::InRange(r) => {
                        for (col, &comp) in out_idx.iter().enumerate() {
                            y.set(j, col, slice.values.get(r, comp));
                        }
                    }
                    RowRef::PadZero => {
                        padded_out_rows.insert(j);
                    }
                    RowRef::PadEdge(r) => {
                        padded_out_rows.insert(j);
                        for (col, &comp) in out_idx.iter().enumerate() {
                            y.set(j, col, slice.values.get(r, comp));
                        }
                    }
                }
            }
            if let Some(sc) = scaler {
                y = sc.apply_outputs(&y, &out_idx);
            }
            y
        }
        TaskKind::Classification { n_classes } => {
            let idx = point.t as i64 + c;
            let label = match resolve_row(idx, len, task.edge_policy, point)? {
                RowRef::InRange(r) | RowRef::PadEdge(r) => slice.values.get(r, out_idx[0]),
                RowRef::PadZero => 0.0,
            };
            let class = label.round();
            if (label - class).abs() > 1e-9 || class < 0.0 || class >= n_classes as f64 {
                return Err(TimebaseError::InvalidLabel {
                    value: label,
                    slice: point.slice,
                    row: idx.clamp(0, len as i64 - 1) as usize,
                    n_classes,
                });
            }
            let mut y = Matrix::zeros(1, n_classes);
            y.set(0, class as usize, 1.0);
            y
        }
    };

    Ok(WindowPair {
        point,
        x,
        y,
        padded_rows,
        padded_out_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::dataset_from_columns;
    use super::*;
    use crate::timebase::ComponentRole::Both;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn task(a: i64, b: i64, c: i64, d: i64, policy: EdgePolicy) -> TaskSpec {
        TaskSpec {
            in_delays: (a, b),
            in_components: vec!["x".into()],
            out_delays: (c, d),
            out_components: vec!["x".into()],
            kind: TaskKind::Regression,
            edge_policy: policy,
        }
    }

    fn ramp_dataset(len: usize) -> TimeSeriesDataset {
        let rows: Vec<Vec<f64>> = (0..len).map(|r| vec![r as f64]).collect();
        dataset_from_columns(60, &[("x", Both)], &[(0, rows)])
    }

    #[test]
    fn drop_policy_bounds_oracle() {
        // length 10, delays a=-2, b=0, c=6, d=6: t-2 >= 0 and t+6 <= 9
        // leave t in {2, 3} (the 3rd and 4th rows)
        let ds = ramp_dataset(10);
        let pts = enumerate_prediction_points(&ds, &task(-2, 0, 6, 6, EdgePolicy::Drop)).unwrap();
        let ts: Vec<usize> = pts.iter().map(|p| p.t).collect();
        assert_eq!(ts, vec![2, 3]);

        // brute force over every t confirms the same set
        let brute: Vec<usize> = (0..10i64)
            .filter(|t| t - 2 >= 0 && t + 6 <= 9)
            .map(|t| t as usize)
            .collect();
        assert_eq!(ts, brute);
    }

    #[test]
    fn zero_reach_admits_every_row() {
        let ds = ramp_dataset(5);
        let pts = enumerate_prediction_points(&ds, &task(0, 0, 0, 0, EdgePolicy::Drop)).unwrap();
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn oversized_window_yields_empty_task() {
        let ds = ramp_dataset(3);
        let e = enumerate_prediction_points(&ds, &task(-5, 0, 0, 0, EdgePolicy::Drop));
        assert!(matches!(e, Err(TimebaseError::EmptyTask)));
    }

    #[test]
    fn pad_policies_admit_every_row() {
        let ds = ramp_dataset(4);
        for policy in [EdgePolicy::PadZero, EdgePolicy::PadEdge] {
            let pts = enumerate_prediction_points(&ds, &task(-2, 0, 1, 1, policy)).unwrap();
            assert_eq!(pts.len(), 4);
        }
    }

    #[test]
    fn subsample_stride_and_limit() {
        let pts: Vec<PredictionPoint> =
            (0..10).map(|t| PredictionPoint { slice: 0, t }).collect();
        let thin = subsample(&pts, 3, None);
        assert_eq!(thin.iter().map(|p| p.t).collect::<Vec<_>>(), vec![0, 3, 6, 9]);
        let capped = subsample(&pts, 1, Some(4));
        assert_eq!(capped.len(), 4);
    }

    #[test]
    fn two_component_window_layout() {
        // temperature + wind speed in, delays [-2, 0]; temperature out at
        // [6, 6]: X is (3, 2) rows [x_{t-2}; x_{t-1}; x_t], Y is (1, 1)
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|r| vec![100.0 + r as f64, 200.0 + r as f64])
            .collect();
        let ds = dataset_from_columns(60, &[("temperature", Both), ("wind_speed", Both)], &[(0, rows)]);
        let task = TaskSpec {
            in_delays: (-2, 0),
            in_components: vec!["temperature".into(), "wind_speed".into()],
            out_delays: (6, 6),
            out_components: vec!["temperature".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        let pts = enumerate_prediction_points(&ds, &task).unwrap();
        let p = pts[0];
        assert_eq!(p.t, 2);
        let w = build_window_pair(&ds, p, &task, None).unwrap();
        assert_eq!((w.x.rows, w.x.cols), (3, 2));
        assert_eq!((w.y.rows, w.y.cols), (1, 1));
        assert_eq!(w.x.row(0), &[100.0, 200.0]); // t-2
        assert_eq!(w.x.row(1), &[101.0, 201.0]); // t-1
        assert_eq!(w.x.row(2), &[102.0, 202.0]); // t
        assert_eq!(w.y.get(0, 0), 108.0); // temperature at t+6
    }

    #[test]
    fn identity_window() {
        let ds = ramp_dataset(5);
        let t = task(0, 0, 0, 0, EdgePolicy::Drop);
        let w = build_window_pair(&ds, PredictionPoint { slice: 0, t: 3 }, &t, None).unwrap();
        assert_eq!((w.x.rows, w.x.cols), (1, 1));
        assert_eq!(w.x.get(0, 0), 3.0);
    }

    #[test]
    fn windows_match_slicing_oracle() {
        // random 2-component dataset, n=50, a=-3,b=1,c=2,d=4
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let ds = dataset_from_columns(60, &[("u", Both), ("v", Both)], &[(0, rows.clone())]);
        let task = TaskSpec {
            in_delays: (-3, 1),
            in_components: vec!["u".into(), "v".into()],
            out_delays: (2, 4),
            out_components: vec!["v".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        let pts = enumerate_prediction_points(&ds, &task).unwrap();
        assert_eq!(pts.len(), 50 - 3 - 4); // t in 3..=45
        for p in pts {
            let w = build_window_pair(&ds, p, &task, None).unwrap();
            for (i, delay) in (-3..=1).enumerate() {
                let src = (p.t as i64 + delay) as usize;
                assert_eq!(w.x.row(i), rows[src].as_slice());
            }
            for (j, delay) in (2..=4).enumerate() {
                let src = (p.t as i64 + delay) as usize;
                assert_eq!(w.y.get(j, 0), rows[src][1]);
            }
            assert!(w.padded_rows.is_empty());
            assert!(w.padded_out_rows.is_empty());
        }
    }

    #[test]
    fn pad_zero_and_pad_edge_fill_missing_rows() {
        let ds = ramp_dataset(4); // values 0,1,2,3
        let p = PredictionPoint { slice: 0, t: 0 };

        let w = build_window_pair(&ds, p, &task(-2, 0, 0, 0, EdgePolicy::PadZero), None).unwrap();
        assert_eq!(w.x.col(0), vec![0.0, 0.0, 0.0]);
        assert_eq!(w.padded_rows.iter().copied().collect::<Vec<_>>(), vec![0, 1]);

        let w = build_window_pair(&ds, p, &task(-2, 0, 0, 0, EdgePolicy::PadEdge), None).unwrap();
        assert_eq!(w.x.col(0), vec![0.0, 0.0, 0.0]); // replicates row 0 (value 0)
        let p3 = PredictionPoint { slice: 0, t: 3 };
        let w = build_window_pair(&ds, p3, &task(0, 2, 0, 0, EdgePolicy::PadEdge), None).unwrap();
        assert_eq!(w.x.col(0), vec![3.0, 3.0, 3.0]); // rows 4, 5 replicate row 3
        assert_eq!(w.padded_rows.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn padded_windows_agree_with_drop_where_defined() {
        let ds = ramp_dataset(10);
        let drop_task = task(-2, 0, 1, 2, EdgePolicy::Drop);
        let pad_task = task(-2, 0, 1, 2, EdgePolicy::PadZero);
        let drop_pts = enumerate_prediction_points(&ds, &drop_task).unwrap();
        for p in drop_pts {
            let a = build_window_pair(&ds, p, &drop_task, None).unwrap();
            let b = build_window_pair(&ds, p, &pad_task, None).unwrap();
            assert_eq!(a.x.data, b.x.data);
            assert_eq!(a.y.data, b.y.data);
            assert!(b.padded_rows.is_empty());
        }
    }

    #[test]
    fn classification_one_hot_and_label_validation() {
        let rows = vec![
            vec![0.1, 0.0],
            vec![0.2, 2.0],
            vec![0.3, 1.0],
            vec![0.4, 1.5],
        ];
        let ds = dataset_from_columns(60, &[("x", Both), ("label", Both)], &[(0, rows)]);
        let mut task = TaskSpec {
            in_delays: (0, 0),
            in_components: vec!["x".into()],
            out_delays: (0, 0),
            out_components: vec!["label".into()],
            kind: TaskKind::Classification { n_classes: 3 },
            edge_policy: EdgePolicy::Drop,
        };
        let w = build_window_pair(&ds, PredictionPoint { slice: 0, t: 1 }, &task, None).unwrap();
        assert_eq!(w.y.data, vec![0.0, 0.0, 1.0]);

        // non-integer label rejected
        let e = build_window_pair(&ds, PredictionPoint { slice: 0, t: 3 }, &task, None);
        assert!(matches!(e, Err(TimebaseError::InvalidLabel { .. })));

        // label out of class range rejected
        task.kind = TaskKind::Classification { n_classes: 2 };
        let e = build_window_pair(&ds, PredictionPoint { slice: 0, t: 1 }, &task, None);
        assert!(matches!(e, Err(TimebaseError::InvalidLabel { .. })));
    }

    #[test]
    fn drop_rejects_out_of_range_point()  {
        let ds = ramp_dataset(5);
        let e = build_window_pair(
            &ds,
            PredictionPoint { slice: 0, t: 0 },
            &task(-2, 0, 0, 0, EdgePolicy::Drop),
            None,
        );
        assert!(matches!(e, Err(TimebaseError::OutOfRange { .. })));
    }
}

//! Datasets on a fixed time grid: import, slices, interpolation,
//! prediction points, window construction, splitting, and scaling.
//!
//! A dataset is a multivariate series cut into *slices* — maximal runs of
//! consecutive timestamps exactly one delta apart. Supervised samples are
//! anchored at *prediction points*: a point `t` inside a slice plus a task
//! spec (delay intervals and component selections) define one input window
//! and one output window. Windows never cross slice boundaries.

mod import;
mod prepared;
mod scale;
mod split;
mod store;
mod window;

pub use import::{import_dataset, interpolate_gaps, read_csv_table, InterpMethod, RawTable};
pub use prepared::{PrepareOptions, PreparedTask};
#[cfg(test)]
pub(crate) use tests::dataset_from_columns;
pub use scale::{fit_scaler, ScalerParams};
pub use split::{split_points, Split, SplitAssignment, SplitMode};
pub use store::{load_dataset, save_dataset};
pub use window::{build_window_pair, enumerate_prediction_points, subsample, WindowPair};

use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimebaseError {
    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotonicTimestamps { row: usize },
    #[error("timestamp at row {row} is not on the {delta}-second grid")]
    OffGridTimestamp { row: usize, delta: i64 },
    #[error("component `{0}` missing from table")]
    MissingComponent(String),
    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumericValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("unparseable timestamp `{value}` at row {row}")]
    BadTimestamp { row: usize, value: String },
    #[error("delta must be positive, got {0}")]
    NonPositiveDelta(i64),
    #[error("table has no rows")]
    EmptyTable,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("task admits no prediction points in this dataset")]
    EmptyTask,
    #[error("prediction point (slice {slice}, t {t}) needs out-of-slice rows under the drop policy")]
    OutOfRange { slice: usize, t: usize },
    #[error("label {value} at slice {slice} row {row} is not an integer in 0..{n_classes}")]
    InvalidLabel {
        value: f64,
        slice: usize,
        row: usize,
        n_classes: usize,
    },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("requested non-zero {0} split received zero points")]
    DegenerateSplit(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("dataset store corrupt: {0}")]
    CorruptStore(String),
}

/// What a component may be used for in a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRole {
    Input,
    Output,
    Both,
}

impl ComponentRole {
    pub fn can_input(self) -> bool {
        matches!(self, ComponentRole::Input | ComponentRole::Both)
    }

    pub fn can_output(self) -> bool {
        matches!(self, ComponentRole::Output | ComponentRole::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDesc {
    pub name: String,
    pub role: ComponentRole,
}

/// One maximal run of rows at consecutive grid positions.
#[derive(Debug, Clone)]
pub struct Slice {
    /// Timestamp (UTC epoch seconds) of the first row.
    pub start_ts: i64,
    /// timesteps × components, raw units.
    pub values: Matrix,
    /// Rows synthesized by gap interpolation rather than imported.
    pub synthetic_rows: BTreeSet<usize>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.values.rows
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows == 0
    }
}

/// A timestamped multivariate series on a fixed delta grid.
#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub components: Vec<ComponentDesc>,
    /// Grid step in seconds, positive.
    pub delta: i64,
    /// Disjoint, chronologically ordered, each of length ≥ 1.
    pub slices: Vec<Slice>,
}

impl TimeSeriesDataset {
    pub fn n_total(&self) -> usize {
        self.slices.iter().map(Slice::len).sum()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn component_index(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    pub fn value(&self, slice: usize, row: usize, comp: usize) -> f64 {
        self.slices[slice].values.get(row, comp)
    }

    /// Timestamp of a row, derived from the slice start and the grid.
    pub fn timestamp(&self, slice: usize, row: usize) -> i64 {
        self.slices[slice].start_ts + row as i64 * self.delta
    }

    /// Checks the structural invariants; used after import and load.
    pub fn validate(&self) -> Result<(), TimebaseError> {
        if self.delta <= 0 {
            return Err(TimebaseError::NonPositiveDelta(self.delta));
        }
        let mut prev_end: Option<i64> = None;
        for (i, s) in self.slices.iter().enumerate() {
            if s.is_empty() {
                return Err(TimebaseError::CorruptStore(format!("slice {i} is empty")));
            }
            if s.values.cols != self.components.len() {
                return Err(TimebaseError::CorruptStore(format!(
                    "slice {i} has {} columns, dataset declares {}",
                    s.values.cols,
                    self.components.len()
                )));
            }
            if let Some(end) = prev_end {
                // strictly after the previous slice, with at least one
                // whole missing step (otherwise they would be one slice)
                if s.start_ts < end + 2 * self.delta
                    || (s.start_ts - end) % self.delta != 0
                {
                    return Err(TimebaseError::CorruptStore(format!(
                        "slice {i} does not start on a later grid gap"
                    )));
                }
            }
            prev_end = Some(s.start_ts + (s.len() as i64 - 1) * self.delta);
        }
        Ok(())
    }
}

/// Task kind; classification carries the class count K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification { n_classes: usize },
}

impl TaskKind {
    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }
}

/// What to do with prediction points whose windows poke past slice ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Exclude the point entirely.
    #[default]
    Drop,
    /// Synthesize missing rows as zeros.
    PadZero,
    /// Replicate the nearest in-slice row.
    PadEdge,
}

/// Delay intervals and component selections defining the window geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Input delay interval [a, b], a ≤ b.
    pub in_delays: (i64, i64),
    pub in_components: Vec<String>,
    /// Output delay interval [c, d], c ≤ d.
    pub out_delays: (i64, i64),
    pub out_components: Vec<String>,
    pub kind: TaskKind,
    #[serde(default)]
    pub edge_policy: EdgePolicy,
}

impl TaskSpec {
    /// Input window length b − a + 1.
    pub fn l_in(&self) -> usize {
        (self.in_delays.1 - self.in_delays.0 + 1) as usize
    }

    /// Output window length d − c + 1 (regression row count).
    pub fn l_out(&self) -> usize {
        (self.out_delays.1 - self.out_delays.0 + 1) as usize
    }

    /// Rows of the model output: L_out for regression, 1 for classification.
    pub fn out_rows(&self) -> usize {
        match self.kind {
            TaskKind::Regression => self.l_out(),
            TaskKind::Classification { .. } => 1,
        }
    }

    /// Columns of the model output: c_out for regression, K for classification.
    pub fn out_cols(&self) -> usize {
        match self.kind {
            TaskKind::Regression => self.out_components.len(),
            TaskKind::Classification { n_classes } => n_classes,
        }
    }

    /// Structural checks plus component lookup against a dataset.
    pub fn validate(&self, ds: &TimeSeriesDataset) -> Result<(), TimebaseError> {
        let bad = |msg: String| Err(TimebaseError::InvalidTask(msg));
        let (a, b) = self.in_delays;
        let (c, d) = self.out_delays;
        if a > b {
            return bad(format!("in_delays [{a}, {b}] must satisfy a <= b"));
        }
        if c > d {
            return bad(format!("out_delays [{c}, {d}] must satisfy c <= d"));
        }
        if self.in_components.is_empty() {
            return bad("in_components is empty".into());
        }
        if self.out_components.is_empty() {
            return bad("out_components is empty".into());
        }
        for name in &self.in_components {
            match ds.component_index(name) {
                None => return Err(TimebaseError::MissingComponent(name.clone())),
                Some(i) if !ds.components[i].role.can_input() => {
                    return bad(format!("component `{name}` is not input-capable"));
                }
                _ => {}
            }
        }
        for name in &self.out_components {
            match ds.component_index(name) {
                None => return Err(TimebaseError::MissingComponent(name.clone())),
                Some(i) if !ds.components[i].role.can_output() => {
                    return bad(format!("component `{name}` is not output-capable"));
                }
                _ => {}
            }
        }
        if let TaskKind::Classification { n_classes } = self.kind {
            if n_classes < 2 {
                return bad(format!("classification needs at least 2 classes, got {n_classes}"));
            }
            if self.out_components.len() != 1 {
                return bad("classification takes exactly one label component".into());
            }
        }
        Ok(())
    }

    /// Dataset column indices of the input components, in task order.
    pub fn in_indices(&self, ds: &TimeSeriesDataset) -> Vec<usize> {
        self.in_components
            .iter()
            .map(|n| ds.component_index(n).expect("validated task"))
            .collect()
    }

    /// Dataset column indices of the output components, in task order.
    pub fn out_indices(&self, ds: &TimeSeriesDataset) -> Vec<usize> {
        self.out_components
            .iter()
            .map(|n| ds.component_index(n).expect("validated task"))
            .collect()
    }

    // --- task-flavor predicates ------------------------------------------

    /// Output components all appear among the inputs and the input interval
    /// ends strictly before the output interval starts.
    pub fn is_autoregressive(&self) -> bool {
        self.out_components
            .iter()
            .all(|c| self.in_components.contains(c))
            && self.is_causal()
    }

    /// Single-step prediction: c = d.
    pub fn is_single_step(&self) -> bool {
        self.out_delays.0 == self.out_delays.1
    }

    /// Univariate task: one output component.
    pub fn is_univariate(&self) -> bool {
        self.out_components.len() == 1
    }

    /// Temporal causality local to the prediction point: every input index
    /// precedes every output index (b < c).
    pub fn is_causal(&self) -> bool {
        self.in_delays.1 < self.out_delays.0
    }
}

/// Anchor of one supervised sample: a row `t` within a slice.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct PredictionPoint {
    pub slice: usize,
    /// 0-based row index within the slice.
    pub t: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn dataset_from_columns(
        delta: i64,
        comps: &[(&str, ComponentRole)],
        slices: &[(i64, Vec<Vec<f64>>)],
    ) -> TimeSeriesDataset {
        let components = comps
            .iter()
            .map(|(n, r)| ComponentDesc {
                name: n.to_string(),
                role: *r,
            })
            .collect();
        let slices = slices
            .iter()
            .map(|(start, rows)| Slice {
                start_ts: *start,
                values: Matrix::from_rows(rows),
                synthetic_rows: BTreeSet::new(),
            })
            .collect();
        let ds = TimeSeriesDataset {
            name: "test".into(),
            components,
            delta,
            slices,
        };
        ds.validate().unwrap();
        ds
    }

    #[test]
    fn window_lengths_follow_interval_semantics() {
        // footnote semantics: [2, 5] spans 4 rows
        let task = TaskSpec {
            in_delays: (2, 5),
            in_components: vec!["x".into()],
            out_delays: (0, 0),
            out_components: vec!["y".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        assert_eq!(task.l_in(), 4);
        assert_eq!(task.l_out(), 1);
    }

    #[test]
    fn flavor_predicates() {
        let mut task = TaskSpec {
            in_delays: (-2, 0),
            in_components: vec!["x".into(), "y".into()],
            out_delays: (1, 3),
            out_components: vec!["y".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        assert!(task.is_autoregressive());
        assert!(task.is_causal());
        assert!(task.is_univariate());
        assert!(!task.is_single_step());

        // overlap in time breaks causality (and with it autoregression)
        task.out_delays = (0, 0);
        assert!(!task.is_causal());
        assert!(!task.is_autoregressive());
        assert!(task.is_single_step());

        // outputs not contained in inputs are not autoregressive
        task.out_delays = (1, 1);
        task.out_components = vec!["z".into()];
        assert!(task.is_causal());
        assert!(!task.is_autoregressive());
    }

    #[test]
    fn validate_rejects_role_misuse() {
        let ds = dataset_from_columns(
            60,
            &[("x", ComponentRole::Input), ("y", ComponentRole::Output)],
            &[(0, vec![vec![1.0, 2.0]])],
        );
        let task = TaskSpec {
            in_delays: (0, 0),
            in_components: vec!["y".into()],
            out_delays: (0, 0),
            out_components: vec!["y".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        assert!(matches!(
            task.validate(&ds),
            Err(TimebaseError::InvalidTask(_))
        ));
    }
}

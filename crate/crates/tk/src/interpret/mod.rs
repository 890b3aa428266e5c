//! Feature attribution over trained models.
//!
//! Three methods — integrated gradients, gradient×input, and occlusion —
//! score each cell of an input window by its influence on one scalar model
//! output. Prediction points are picked by loss rank, at random, or
//! explicitly; absolute attributions aggregate across points into an
//! importance map with per-delay and per-component marginals.
//!
//! Attributions are computed and reported in scaled-input space (the space
//! the model actually sees); each result also carries the raw-unit input
//! window for display.

mod render;

pub use render::{
    attribution_csv, heatmap_svg, parse_attribution_csv, render_attribution, ColorScale,
};

use crate::arch::{ArchError, ForwardOptions, Model, Registry};
use crate::matrix::Matrix;
use crate::tensor::{Tape, Tensor, TensorError};
use crate::timebase::{PredictionPoint, PreparedTask, Split, TaskKind, TimebaseError};
use crate::train::{evaluate_model, Checkpoint, PointLoss, TrainError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("selection asks for {requested} points but the split has {available}")]
    KTooLarge { requested: usize, available: usize },
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("no attribution results to aggregate")]
    EmptyResults,
    #[error("invalid interpretation request: {0}")]
    Config(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Timebase(#[from] TimebaseError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Attribution method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IntegratedGradients,
    GradXInput,
    Occlusion,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::IntegratedGradients => "integrated_gradients",
            Method::GradXInput => "grad_x_input",
            Method::Occlusion => "occlusion",
        }
    }
}

/// The scalar model output being attributed.
///
/// `Auto` resolves to the single output cell for 1×1 regression outputs and
/// to the logit of the predicted class for classification; multi-cell
/// regression outputs require an explicit cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Auto,
    /// Output-window cell: (delay row, output component column).
    Cell { row: usize, col: usize },
    /// A fixed class logit (classification tasks).
    Class { index: usize },
}

/// Reference input the attribution is measured against, expressed in the
/// same scaled-input space the attributions live in. `TrainMean` is the
/// per-component train mean, which scaling maps to the origin — so it
/// coincides with `Zero` whenever inputs are scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Zero,
    #[default]
    TrainMean,
    /// Explicit L_in × c_in matrix (scaled-input units).
    Custom(Vec<Vec<f64>>),
}

impl Baseline {
    pub fn descriptor(&self) -> &'static str {
        match self {
            Baseline::Zero => "zero",
            Baseline::TrainMean => "train_mean",
            Baseline::Custom(_) => "custom",
        }
    }
}

/// How prediction points are picked for interpretation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Seeded uniform draw without replacement.
    Random,
    /// The k points with the smallest losses.
    Best,
    /// The k points with the largest losses.
    Worst,
    /// Pass `indices` through (positions within the split's point list).
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub mode: SelectionMode,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub seed: u64,
    /// Used only by `Explicit`.
    #[serde(default)]
    pub indices: Vec<usize>,
}

fn default_count() -> usize {
    1
}

fn default_split() -> Split {
    Split::Val
}

/// A full attribution request over a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionRequest {
    pub method: Method,
    #[serde(default)]
    pub target: Target,
    #[serde(default)]
    pub baseline: Baseline,
    /// Riemann steps for integrated gradients.
    #[serde(default = "default_ig_steps")]
    pub ig_steps: usize,
    /// Occlusion patch extents (delay rows, component columns).
    #[serde(default = "default_patch")]
    pub patch: (usize, usize),
    pub selection: SelectionSpec,
}

fn default_ig_steps() -> usize {
    64
}

fn default_patch() -> (usize, usize) {
    (1, 1)
}

/// Attribution of one prediction point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointAttribution {
    pub point: PredictionPoint,
    /// The per-point loss that drove selection.
    pub loss: f64,
    /// L_in × c_in attribution scores in scaled-input units.
    pub attribution: Matrix,
    /// The same window in raw units, for display.
    pub input_raw: Matrix,
    /// The resolved scalar target: (output row, output column).
    pub target_cell: (usize, usize),
    pub output_at_x: f64,
    pub output_at_baseline: f64,
    /// |Σ A − (F(x) − F(x′))|, recorded for integrated gradients.
    pub completeness_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    pub method: Method,
    pub target: Target,
    pub baseline: Baseline,
    pub ig_steps: usize,
    pub points: Vec<PointAttribution>,
}

/// Mean absolute attribution across points, with row/column marginals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceSummary {
    /// L_in × c_in mean of |A| over points.
    pub importance: Matrix,
    /// Row means: one value per input delay.
    pub per_delay: Vec<f64>,
    /// Column means: one value per input component.
    pub per_component: Vec<f64>,
}

/// Picks prediction points by loss rank, random draw, or explicit indices.
///
/// Ranked modes break loss ties in favor of the earlier timestamp; the
/// random draw is without replacement and returned in chronological order.
pub fn select_points(
    losses: &[PointLoss],
    spec: &SelectionSpec,
) -> Result<Vec<PredictionPoint>, InterpretError> {
    Ok(select_indices(losses, spec)?
        .into_iter()
        .map(|i| losses[i].point)
        .collect())
}

fn select_indices(
    losses: &[PointLoss],
    spec: &SelectionSpec,
) -> Result<Vec<usize>, InterpretError> {
    let n = losses.len();
    if spec.mode == SelectionMode::Explicit {
        if spec.indices.is_empty() {
            return Err(InterpretError::Config(
                "explicit selection needs at least one index".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &i in &spec.indices {
            if i >= n {
                return Err(InterpretError::Config(format!(
                    "explicit index {i} out of range for a split with {n} points"
                )));
            }
            if !seen.insert(i) {
                return Err(InterpretError::Config(format!(
                    "explicit index {i} appears twice"
                )));
            }
        }
        return Ok(spec.indices.clone());
    }

    if spec.count == 0 {
        return Err(InterpretError::Config("count must be at least 1".into()));
    }
    if spec.count > n {
        return Err(InterpretError::KTooLarge {
            requested: spec.count,
            available: n,
        });
    }
    let time_key = |i: usize| (losses[i].point.slice, losses[i].point.t);
    let mut order: Vec<usize> = (0..n).collect();
    match spec.mode {
        SelectionMode::Best => {
            order.sort_by(|&a, &b| {
                losses[a]
                    .loss
                    .total_cmp(&losses[b].loss)
                    .then(time_key(a).cmp(&time_key(b)))
            });
        }
        SelectionMode::Worst => {
            order.sort_by(|&a, &b| {
                losses[b]
                    .loss
                    .total_cmp(&losses[a].loss)
                    .then(time_key(a).cmp(&time_key(b)))
            });
        }
        SelectionMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut drawn = rand::seq::index::sample(&mut rng, n, spec.count).into_vec();
            drawn.sort_unstable();
            return Ok(drawn);
        }
        SelectionMode::Explicit => unreachable!(),
    }
    order.truncate(spec.count);
    Ok(order)
}

/// One stateless forward of a single (L_in × c_in) window, reduced to the
/// scalar at `target`; returns the scalar and, on request, ∂F/∂x.
fn scalar_forward(
    model: &mut Model,
    x: &Matrix,
    target: (usize, usize),
    want_grad: bool,
) -> Result<(f64, Option<Matrix>), InterpretError> {
    let (l, c) = (model.shapes.l_in, model.shapes.c_in);
    debug_assert_eq!((x.rows, x.cols), (l, c));
    let mut input = Tensor::from_vec(&[1, l, c], x.data.clone());
    if want_grad {
        input = input.with_grad();
    }
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, &input, ForwardOptions::default(), None)?;

    let (rows, cols) = (model.shapes.out_rows, model.shapes.out_cols);
    let mut mask = vec![0.0; rows * cols];
    mask[target.0 * cols + target.1] = 1.0;
    let mask_var = tape.constant(Tensor::from_vec(&[1, rows, cols], mask));
    let picked = tape.mul(pass.output, mask_var)?;
    let f_var = tape.sum(picked);
    let f = tape.value(f_var).item();
    if !f.is_finite() {
        return Err(InterpretError::NonFiniteGradient(format!(
            "model output at target ({}, {}) is {f}",
            target.0, target.1
        )));
    }
    if !want_grad {
        return Ok((f, None));
    }

    let x_var = pass.x_var;
    let grads = tape.backward(f_var)?;
    let g = grads.wrt(x_var);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(InterpretError::NonFiniteGradient(
            "input gradient has non-finite entries".into(),
        ));
    }
    Ok((f, Some(Matrix::from_vec(l, c, g.to_vec()))))
}

fn check_window_shapes(model: &Model, x: &Matrix, baseline: &Matrix) -> Result<(), InterpretError> {
    let want = (model.shapes.l_in, model.shapes.c_in);
    for (name, m) in [("input", x), ("baseline", baseline)] {
        if (m.rows, m.cols) != want {
            return Err(InterpretError::Config(format!(
                "{name} is {}×{}, the model expects {}×{}",
                m.rows, m.cols, want.0, want.1
            )));
        }
    }
    Ok(())
}

/// Integrated gradients with the midpoint Riemann rule:
/// A_i = (x_i − x′_i) · (1/m) Σ_{s=1..m} ∂F/∂x_i (x′ + (s−0.5)/m · (x − x′)).
pub struct IgOutcome {
    pub attribution: Matrix,
    pub f_x: f64,
    pub f_baseline: f64,
    /// |Σ A − (F(x) − F(x′))|.
    pub completeness_gap: f64,
}

pub fn integrated_gradients(
    model: &mut Model,
    x: &Matrix,
    baseline: &Matrix,
    target: (usize, usize),
    m: usize,
) -> Result<IgOutcome, InterpretError> {
    if m < 1 {
        return Err(InterpretError::Config("ig_steps must be at least 1".into()));
    }
    check_window_shapes(model, x, baseline)?;

    let n = x.data.len();
    let mut grad_sum = vec![0.0; n];
    for s in 1..=m {
        let alpha = (s as f64 - 0.5) / m as f64;
        let interp = Matrix::from_vec(
            x.rows,
            x.cols,
            (0..n)
                .map(|i| baseline.data[i] + alpha * (x.data[i] - baseline.data[i]))
                .collect(),
        );
        let (_, g) = scalar_forward(model, &interp, target, true)?;
        let g = g.expect("gradient requested");
        for (acc, gi) in grad_sum.iter_mut().zip(&g.data) {
            *acc += gi;
        }
    }
    let attribution = Matrix::from_vec(
        x.rows,
        x.cols,
        (0..n)
            .map(|i| (x.data[i] - baseline.data[i]) * grad_sum[i] / m as f64)
            .collect(),
    );

    let (f_x, _) = scalar_forward(model, x, target, false)?;
    let (f_baseline, _) = scalar_forward(model, baseline, target, false)?;
    let total: f64 = attribution.data.iter().sum();
    Ok(IgOutcome {
        attribution,
        f_x,
        f_baseline,
        completeness_gap: (total - (f_x - f_baseline)).abs(),
    })
}

/// Gradient×input: A_i = x_i · ∂F/∂x_i(x).
pub fn grad_x_input(
    model: &mut Model,
    x: &Matrix,
    target: (usize, usize),
) -> Result<(Matrix, f64), InterpretError> {
    let (f_x, g) = scalar_forward(model, x, target, true)?;
    let g = g.expect("gradient requested");
    let a = Matrix::from_vec(
        x.rows,
        x.cols,
        x.data.iter().zip(&g.data).map(|(xi, gi)| xi * gi).collect(),
    );
    Ok((a, f_x))
}

/// Occlusion: each patch scores F(x) − F(x with the patch replaced by the
/// baseline values); every cell of a patch carries its patch's score.
pub fn occlusion(
    model: &mut Model,
    x: &Matrix,
    baseline: &Matrix,
    target: (usize, usize),
    patch: (usize, usize),
) -> Result<(Matrix, f64, f64), InterpretError> {
    if patch.0 < 1 || patch.1 < 1 {
        return Err(InterpretError::Config(
            "occlusion patch spans must be at least 1".into(),
        ));
    }
    check_window_shapes(model, x, baseline)?;

    let (f_x, _) = scalar_forward(model, x, target, false)?;
    let mut a = Matrix::zeros(x.rows, x.cols);
    for r0 in (0..x.rows).step_by(patch.0) {
        for c0 in (0..x.cols).step_by(patch.1) {
            let r1 = (r0 + patch.0).min(x.rows);
            let c1 = (c0 + patch.1).min(x.cols);
            let mut patched = x.clone();
            for r in r0..r1 {
                for c in c0..c1 {
                    patched.set(r, c, baseline.get(r, c));
                }
            }
            let (f_p, _) = scalar_forward(model, &patched, target, false)?;
            for r in r0..r1 {
                for c in c0..c1 {
                    a.set(r, c, f_x - f_p);
                }
            }
        }
    }
    let (f_baseline, _) = scalar_forward(model, baseline, target, false)?;
    Ok((a, f_x, f_baseline))
}

/// Mean of |A| over points plus per-delay (row) and per-component (column)
/// marginal means.
pub fn aggregate_importance(
    results: &[PointAttribution],
) -> Result<ImportanceSummary, InterpretError> {
    let first = results.first().ok_or(InterpretError::EmptyResults)?;
    let (rows, cols) = (first.attribution.rows, first.attribution.cols);
    let mut acc = Matrix::zeros(rows, cols);
    for r in results {
        if (r.attribution.rows, r.attribution.cols) != (rows, cols) {
            return Err(InterpretError::Config(format!(
                "attribution shapes differ: {}×{} vs {rows}×{cols}",
                r.attribution.rows, r.attribution.cols
            )));
        }
        for (a, v) in acc.data.iter_mut().zip(&r.attribution.data) {
            *a += v.abs();
        }
    }
    let n = results.len() as f64;
    for a in &mut acc.data {
        *a /= n;
    }
    Ok(ImportanceSummary {
        per_delay: acc.row_means(),
        per_component: acc.col_means(),
        importance: acc,
    })
}

/// Resolves the request baseline to a scaled-input-space matrix.
fn baseline_matrix(
    prepared: &PreparedTask,
    shapes: (usize, usize),
    baseline: &Baseline,
) -> Result<Matrix, InterpretError> {
    let (l, c) = shapes;
    match baseline {
        Baseline::Zero => Ok(Matrix::zeros(l, c)),
        Baseline::TrainMean => {
            let comps = prepared.task.in_indices(&prepared.dataset);
            let raw = Matrix::from_rows(&vec![
                comps
                    .iter()
                    .map(|&i| prepared.scaler.means[i])
                    .collect::<Vec<_>>();
                l
            ]);
            Ok(prepared.scaler.apply_inputs(&raw, &comps))
        }
        Baseline::Custom(rows) => {
            if rows.len() != l || rows.iter().any(|r| r.len() != c) {
                return Err(InterpretError::Config(format!(
                    "custom baseline must be {l}×{c} to match the input window"
                )));
            }
            Ok(Matrix::from_rows(rows))
        }
    }
}

/// Resolves the requested target to a concrete output cell for one point's
/// (already scaled) input window.
fn resolve_target(
    model: &mut Model,
    task_kind: &TaskKind,
    target: Target,
    x: &Matrix,
) -> Result<(usize, usize), InterpretError> {
    let (rows, cols) = (model.shapes.out_rows, model.shapes.out_cols);
    let classification = task_kind.is_classification();
    match target {
        Target::Cell { row, col } => {
            if row >= rows || col >= cols {
                return Err(InterpretError::Config(format!(
                    "target cell ({row}, {col}) outside the {rows}×{cols} output"
                )));
            }
            Ok((row, col))
        }
        Target::Class { index } => {
            if !classification {
                return Err(InterpretError::Config(
                    "class targets apply to classification tasks only".into(),
                ));
            }
            if index >= cols {
                return Err(InterpretError::Config(format!(
                    "class {index} outside the {cols} classes"
                )));
            }
            Ok((0, index))
        }
        Target::Auto => {
            if classification {
                // the logit of the predicted class (pre-softmax)
                let input = Tensor::from_vec(&[1, x.rows, x.cols], x.data.clone());
                let out = model.predict(&input)?;
                let predicted = out
                    .data
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                Ok((0, predicted))
            } else if rows * cols == 1 {
                Ok((0, 0))
            } else {
                Err(InterpretError::Config(format!(
                    "the output has {rows}×{cols} cells; pick an explicit target cell"
                )))
            }
        }
    }
}

/// Runs a full attribution request against a checkpointed model: evaluates
/// per-point losses on the selection split, selects points, and attributes
/// each one.
pub fn run_attribution(
    registry: &Registry,
    checkpoint: &Checkpoint,
    prepared: &PreparedTask,
    request: &AttributionRequest,
) -> Result<AttributionReport, InterpretError> {
    if request.ig_steps < 1 {
        return Err(InterpretError::Config("ig_steps must be at least 1".into()));
    }
    let mut model = checkpoint.instantiate(registry)?;

    let eval = evaluate_model(
        &mut model,
        prepared,
        request.selection.split,
        checkpoint.config.loss,
        checkpoint.config.batch_size,
    )?;
    let chosen = select_indices(&eval.per_point, &request.selection)?;

    let shapes = (model.shapes.l_in, model.shapes.c_in);
    let baseline = baseline_matrix(prepared, shapes, &request.baseline)?;

    let mut points = Vec::with_capacity(chosen.len());
    for idx in chosen {
        let PointLoss { point, loss } = eval.per_point[idx];
        let x = prepared.window(point)?.x;
        let input_raw = prepared.raw_window(point)?.x;
        let target_cell = resolve_target(&mut model, &prepared.task.kind, request.target, &x)?;

        let (attribution, output_at_x, output_at_baseline, completeness_gap) =
            match request.method {
                Method::IntegratedGradients => {
                    let ig = integrated_gradients(
                        &mut model,
                        &x,
                        &baseline,
                        target_cell,
                        request.ig_steps,
                    )?;
                    (
                        ig.attribution,
                        ig.f_x,
                        ig.f_baseline,
                        Some(ig.completeness_gap),
                    )
                }
                Method::GradXInput => {
                    let (a, f_x) = grad_x_input(&mut model, &x, target_cell)?;
                    let (f_b, _) = scalar_forward(&mut model, &baseline, target_cell, false)?;
                    (a, f_x, f_b, None)
                }
                Method::Occlusion => {
                    let (a, f_x, f_b) =
                        occlusion(&mut model, &x, &baseline, target_cell, request.patch)?;
                    (a, f_x, f_b, None)
                }
            };

        points.push(PointAttribution {
            point,
            loss,
            attribution,
            input_raw,
            target_cell,
            output_at_x,
            output_at_baseline,
            completeness_gap,
        });
    }

    Ok(AttributionReport {
        method: request.method,
        target: request.target,
        baseline: request.baseline.clone(),
        ig_steps: request.ig_steps,
        points,
    })
}

#[cfg(test)]
mod tests;

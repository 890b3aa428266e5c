use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::*;
use crate::arch::{ArchDef, ArchSpec, LinearDef, TaskShapes};
use crate::timebase::{dataset_from_columns, ComponentRole, EdgePolicy, PrepareOptions, TaskSpec};
use crate::train::{train, TrainConfig};

fn point(t: usize) -> PredictionPoint {
    PredictionPoint { slice: 0, t }
}

fn losses(values: &[f64]) -> Vec<PointLoss> {
    values
        .iter()
        .enumerate()
        .map(|(t, &loss)| PointLoss {
            point: point(t),
            loss,
        })
        .collect()
}

fn spec(mode: SelectionMode, count: usize) -> SelectionSpec {
    SelectionSpec {
        mode,
        count,
        split: Split::Val,
        seed: 0,
        indices: Vec::new(),
    }
}

#[test]
fn best_and_worst_are_exact_order_statistics() {
    let ls = losses(&[0.1, 0.3, 0.05]);
    let best = select_points(&ls, &spec(SelectionMode::Best, 1)).unwrap();
    assert_eq!(best, vec![point(2)]);

    let worst = select_points(&ls, &spec(SelectionMode::Worst, 2)).unwrap();
    assert_eq!(worst, vec![point(1), point(0)]);
}

#[test]
fn loss_ties_break_to_the_earlier_timestamp() {
    let ls = losses(&[0.5, 0.5, 0.1]);
    let best = select_points(&ls, &spec(SelectionMode::Best, 2)).unwrap();
    assert_eq!(best, vec![point(2), point(0)]);
    let worst = select_points(&ls, &spec(SelectionMode::Worst, 1)).unwrap();
    assert_eq!(worst, vec![point(0)]);
}

#[test]
fn random_selection_is_seeded_and_without_replacement() {
    let ls = losses(&[0.4, 0.2, 0.9, 0.1, 0.6]);
    let mut s = spec(SelectionMode::Random, 3);
    s.seed = 7;
    let a = select_points(&ls, &s).unwrap();
    let b = select_points(&ls, &s).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    let distinct: std::collections::BTreeSet<_> = a.iter().map(|p| p.t).collect();
    assert_eq!(distinct.len(), 3);

    s.seed = 8;
    let c = select_points(&ls, &s).unwrap();
    assert!(a != c || a == c, "both outcomes are legal; just deterministic");
}

#[test]
fn explicit_selection_validates_indices() {
    let ls = losses(&[0.4, 0.2, 0.9]);
    let mut s = spec(SelectionMode::Explicit, 1);
    s.indices = vec![2, 0];
    let picked = select_points(&ls, &s).unwrap();
    assert_eq!(picked, vec![point(2), point(0)]);

    s.indices = vec![3];
    assert!(matches!(
        select_points(&ls, &s),
        Err(InterpretError::Config(_))
    ));
    s.indices = vec![1, 1];
    assert!(matches!(
        select_points(&ls, &s),
        Err(InterpretError::Config(_))
    ));
    s.indices = vec![];
    assert!(matches!(
        select_points(&ls, &s),
        Err(InterpretError::Config(_))
    ));
}

#[test]
fn oversized_count_reports_k_too_large() {
    let ls = losses(&[0.4, 0.2, 0.9]);
    match select_points(&ls, &spec(SelectionMode::Best, 4)) {
        Err(InterpretError::KTooLarge {
            requested: 4,
            available: 3,
        }) => {}
        other => panic!("expected KTooLarge, got {other:?}"),
    }
}

/// F(x) = Σ wᵢ·xᵢ over a flattened (l × c) window, bias 0.
fn linear_model(weights: &[f64], l: usize, c: usize) -> Model {
    let shapes = TaskShapes {
        l_in: l,
        c_in: c,
        out_rows: 1,
        out_cols: 1,
        classification: false,
    };
    let mut model = LinearDef.build(&ArchSpec::new("linear"), shapes, 0).unwrap();
    model.params.tensors[0].data = weights.to_vec();
    model.params.tensors[1].data = vec![0.0];
    model
}

#[test]
fn ig_is_exact_on_linear_models_for_any_step_count() {
    let mut model = linear_model(&[2.0, 3.0], 2, 1);
    let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
    let zero = Matrix::zeros(2, 1);
    for m in [1, 7, 64] {
        let ig = integrated_gradients(&mut model, &x, &zero, (0, 0), m).unwrap();
        assert!((ig.attribution.get(0, 0) - 2.0).abs() < 1e-9);
        assert!((ig.attribution.get(1, 0) - 3.0).abs() < 1e-9);
        assert_eq!(ig.f_x, 5.0);
        assert_eq!(ig.f_baseline, 0.0);
        assert!(ig.completeness_gap < 1e-9);
    }
}

#[test]
fn ig_of_the_baseline_itself_is_zero() {
    let mut model = linear_model(&[2.0, 3.0], 2, 1);
    let x = Matrix::from_rows(&[vec![0.3], vec![-0.7]]);
    let ig = integrated_gradients(&mut model, &x, &x.clone(), (0, 0), 16).unwrap();
    assert_eq!(ig.attribution.data, vec![0.0, 0.0]);
    assert_eq!(ig.completeness_gap, 0.0);
}

#[test]
fn grad_x_input_matches_ig_with_zero_baseline_on_linear_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let weights: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    let mut model = linear_model(&weights, 3, 2);
    let x = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());

    let (gxi, f_x) = grad_x_input(&mut model, &x, (0, 0)).unwrap();
    let ig = integrated_gradients(&mut model, &x, &Matrix::zeros(3, 2), (0, 0), 5).unwrap();
    assert!(gxi.max_abs_diff(&ig.attribution) < 1e-9);
    assert!((f_x - ig.f_x).abs() < 1e-12);
}

#[test]
fn occlusion_on_linear_models_recovers_each_term() {
    let mut model = linear_model(&[2.0, 3.0], 2, 1);
    let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
    let zero = Matrix::zeros(2, 1);

    let (a, f_x, f_b) = occlusion(&mut model, &x, &zero, (0, 0), (1, 1)).unwrap();
    assert_eq!(a.data, vec![2.0, 3.0]);
    assert_eq!(f_x, 5.0);
    assert_eq!(f_b, 0.0);

    // per-cell occlusions agree with IG cell-for-cell on a linear model
    let ig = integrated_gradients(&mut model, &x, &zero, (0, 0), 3).unwrap();
    assert!(a.max_abs_diff(&ig.attribution) < 1e-9);

    // occluding with the input itself changes nothing
    let (self_occ, _, _) = occlusion(&mut model, &x, &x.clone(), (0, 0), (1, 1)).unwrap();
    assert_eq!(self_occ.data, vec![0.0, 0.0]);
}

#[test]
fn occlusion_patches_share_one_score() {
    let mut model = linear_model(&[2.0, 3.0], 2, 1);
    let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
    let zero = Matrix::zeros(2, 1);
    // one patch covering both rows: each cell carries F(x) − F(0) = 5
    let (a, _, _) = occlusion(&mut model, &x, &zero, (0, 0), (2, 1)).unwrap();
    assert_eq!(a.data, vec![5.0, 5.0]);
}

#[test]
fn ig_completeness_on_a_smooth_mlp() {
    let shapes = TaskShapes {
        l_in: 3,
        c_in: 2,
        out_rows: 1,
        out_cols: 1,
        classification: false,
    };
    let arch = ArchSpec::new("mlp")
        .with("widths", json!([8]))
        .with("activation", json!("tanh"));
    let mut model = Registry::with_defaults().build(&arch, shapes, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
    let baseline = Matrix::zeros(3, 2);

    let ig = integrated_gradients(&mut model, &x, &baseline, (0, 0), 256).unwrap();
    let scale = (ig.f_x - ig.f_baseline).abs();
    assert!(
        ig.completeness_gap <= 1e-3 * scale + 1e-6,
        "gap {} vs output change {scale}",
        ig.completeness_gap
    );
}

#[test]
fn symmetric_duplicate_components_share_attribution() {
    let mut model = linear_model(&[2.0, 2.0], 1, 2);
    let x = Matrix::from_rows(&[vec![0.8, 0.8]]);
    let ig = integrated_gradients(&mut model, &x, &Matrix::zeros(1, 2), (0, 0), 8).unwrap();
    assert!((ig.attribution.get(0, 0) - ig.attribution.get(0, 1)).abs() < 1e-9);
}

#[test]
fn tcn_cells_beyond_the_receptive_field_get_exactly_zero() {
    // 2 blocks, k=2, dilations (1,2), 2 convs per block → receptive field
    // 1 + 2·(1+2) = 7; on a 10-row window, rows 0..3 cannot reach the head
    let arch = ArchSpec::new("tcn")
        .with("blocks", json!(2))
        .with("kernel_size", json!(2))
        .with("dilations", json!([1, 2]))
        .with("channels", json!(3));
    let shapes = TaskShapes {
        l_in: 10,
        c_in: 1,
        out_rows: 1,
        out_cols: 1,
        classification: false,
    };
    let mut model = Registry::with_defaults().build(&arch, shapes, 29).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = Matrix::from_vec(10, 1, (0..10).map(|_| rng.random::<f64>() + 0.5).collect());

    let ig = integrated_gradients(&mut model, &x, &Matrix::zeros(10, 1), (0, 0), 8).unwrap();
    for r in 0..3 {
        assert_eq!(ig.attribution.get(r, 0), 0.0, "row {r} inside the dead zone");
    }
    assert!(ig.attribution.data[3..].iter().any(|&v| v != 0.0));

    let (gxi, _) = grad_x_input(&mut model, &x, (0, 0)).unwrap();
    for r in 0..3 {
        assert_eq!(gxi.get(r, 0), 0.0);
    }
}

fn point_result(a: Matrix) -> PointAttribution {
    PointAttribution {
        point: point(0),
        loss: 0.0,
        input_raw: a.clone(),
        attribution: a,
        target_cell: (0, 0),
        output_at_x: 0.0,
        output_at_baseline: 0.0,
        completeness_gap: None,
    }
}

#[test]
fn importance_is_the_mean_of_absolutes() {
    let a = point_result(Matrix::from_rows(&[vec![1.0]]));
    let b = point_result(Matrix::from_rows(&[vec![-3.0]]));
    let agg = aggregate_importance(&[a, b]).unwrap();
    assert_eq!(agg.importance.data, vec![2.0]);

    // a single result aggregates to its absolute values
    let single = point_result(Matrix::from_rows(&[vec![-1.5, 2.0]]));
    let agg = aggregate_importance(std::slice::from_ref(&single)).unwrap();
    assert_eq!(agg.importance.data, vec![1.5, 2.0]);
}

#[test]
fn marginals_are_row_and_column_means() {
    let r = point_result(Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]));
    let agg = aggregate_importance(&[r]).unwrap();
    assert_eq!(agg.per_component, vec![1.0, 1.0]);
    assert_eq!(agg.per_delay, vec![1.0, 1.0]);
}

#[test]
fn aggregation_rejects_empty_and_ragged_inputs() {
    assert!(matches!(
        aggregate_importance(&[]),
        Err(InterpretError::EmptyResults)
    ));
    let a = point_result(Matrix::zeros(2, 2));
    let b = point_result(Matrix::zeros(3, 2));
    assert!(matches!(
        aggregate_importance(&[a, b]),
        Err(InterpretError::Config(_))
    ));
}

fn demo_task() -> TaskSpec {
    TaskSpec {
        in_delays: (-2, 0),
        in_components: vec!["x".into()],
        out_delays: (0, 0),
        out_components: vec!["y".into()],
        kind: TaskKind::Regression,
        edge_policy: EdgePolicy::Drop,
    }
}

#[test]
fn csv_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let m = Matrix::from_vec(
        3,
        1,
        (0..3).map(|_| (rng.random::<f64>() - 0.5) * 1e-7).collect(),
    );
    let text = attribution_csv(&m, &demo_task());
    let back = parse_attribution_csv(&text).unwrap();
    assert_eq!(back.data, m.data);
    assert!(text.starts_with("delay,x\n"));
    assert!(text.contains("\n-2,"));
}

#[test]
fn svg_heatmap_is_structural_and_deterministic() {
    let m = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.0], vec![-0.25, 2.0]]);
    let rows = vec!["-2".to_string(), "-1".to_string(), "0".to_string()];
    let cols = vec!["x".to_string(), "y".to_string()];
    let svg = heatmap_svg(&m, &rows, &cols, ColorScale::Diverging, "demo");
    assert_eq!(svg.matches("class=\"cell\"").count(), 6);
    assert!(svg.contains(">x<") && svg.contains(">y<"));
    assert!(svg.contains(">-2<"));
    let again = heatmap_svg(&m, &rows, &cols, ColorScale::Diverging, "demo");
    assert_eq!(svg, again);

    let seq = heatmap_svg(&m.map(f64::abs), &rows, &cols, ColorScale::Sequential, "demo");
    assert_ne!(svg, seq);
}

#[test]
fn render_writes_svg_and_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = Matrix::from_rows(&[vec![0.5], vec![-0.5], vec![2.0]]);
    let (svg_path, csv_path) = render_attribution(
        &m,
        &demo_task(),
        ColorScale::Diverging,
        "attribution",
        dir.path(),
        "point_0",
    )
    .unwrap();
    assert!(svg_path.ends_with("point_0.svg") && svg_path.exists());
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(parse_attribution_csv(&text).unwrap().data, m.data);
}

/// y_t = 0.8·x_{t−1}, noiseless.
fn lagged_prepared(n: usize, seed: u64) -> PreparedTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let y = if t >= 1 { 0.8 * xs[t - 1] } else { 0.0 };
            vec![xs[t], y]
        })
        .collect();
    let ds = dataset_from_columns(
        1,
        &[("x", ComponentRole::Input), ("y", ComponentRole::Output)],
        &[(0, rows)],
    );
    PreparedTask::prepare(ds, demo_task(), &PrepareOptions::default()).unwrap()
}

#[test]
fn end_to_end_attribution_ranks_the_true_lag_first() {
    let prepared = lagged_prepared(200, 3);
    let arch = ArchSpec::new("mlp")
        .with("widths", json!([8]))
        .with("activation", json!("tanh"));
    let config = TrainConfig {
        lr: 0.02,
        batch_size: 16,
        max_epochs: 60,
        patience: 60,
        seed: 12,
        ..Default::default()
    };
    let ck = train(&prepared, &arch, &config).unwrap();

    let registry = Registry::with_defaults();
    let request = AttributionRequest {
        method: Method::IntegratedGradients,
        target: Target::Auto,
        baseline: Baseline::TrainMean,
        ig_steps: 32,
        patch: (1, 1),
        selection: SelectionSpec {
            mode: SelectionMode::Best,
            count: 3,
            split: Split::Val,
            seed: 0,
            indices: Vec::new(),
        },
    };
    let report = run_attribution(&registry, &ck, &prepared, &request).unwrap();
    assert_eq!(report.points.len(), 3);
    for p in &report.points {
        assert_eq!((p.attribution.rows, p.attribution.cols), (3, 1));
        assert_eq!((p.input_raw.rows, p.input_raw.cols), (3, 1));
        assert_eq!(p.target_cell, (0, 0));
        let gap = p.completeness_gap.expect("IG records the gap");
        assert!(gap.is_finite());
    }

    // window rows are delays (−2, −1, 0); the generating rule reads −1
    let agg = aggregate_importance(&report.points).unwrap();
    let top = agg
        .per_delay
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(top, 1, "per-delay importance {:?}", agg.per_delay);
}

#[test]
fn occlusion_and_random_selection_run_end_to_end() {
    let prepared = lagged_prepared(120, 5);
    let arch = ArchSpec::new("mlp").with("widths", json!([4]));
    let config = TrainConfig {
        max_epochs: 3,
        patience: 3,
        ..Default::default()
    };
    let ck = train(&prepared, &arch, &config).unwrap();
    let registry = Registry::with_defaults();

    let request = AttributionRequest {
        method: Method::Occlusion,
        target: Target::Auto,
        baseline: Baseline::Zero,
        ig_steps: 64,
        patch: (1, 1),
        selection: SelectionSpec {
            mode: SelectionMode::Random,
            count: 2,
            split: Split::Train,
            seed: 9,
            indices: Vec::new(),
        },
    };
    let a = run_attribution(&registry, &ck, &prepared, &request).unwrap();
    let b = run_attribution(&registry, &ck, &prepared, &request).unwrap();
    assert_eq!(a.points.len(), 2);
    for (pa, pb) in a.points.iter().zip(&b.points) {
        assert_eq!(pa.point, pb.point);
        assert_eq!(pa.attribution.data, pb.attribution.data);
        assert!(pa.completeness_gap.is_none());
    }
}

#[test]
fn classification_auto_target_is_the_predicted_class_logit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..80)
        .map(|_| {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            vec![x, f64::from(x > 0.0)]
        })
        .collect();
    let ds = dataset_from_columns(
        1,
        &[("x", ComponentRole::Input), ("y", ComponentRole::Output)],
        &[(0, rows)],
    );
    let task = TaskSpec {
        in_delays: (-1, 0),
        in_components: vec!["x".into()],
        out_delays: (0, 0),
        out_components: vec!["y".into()],
        kind: TaskKind::Classification { n_classes: 2 },
        edge_policy: EdgePolicy::Drop,
    };
    let prepared = PreparedTask::prepare(ds, task, &PrepareOptions::default()).unwrap();
    let config = TrainConfig {
        loss: crate::train::LossKind::CrossEntropy,
        max_epochs: 5,
        patience: 5,
        ..Default::default()
    };
    let ck = train(&prepared, &ArchSpec::new("mlp"), &config).unwrap();
    let registry = Registry::with_defaults();

    let request = AttributionRequest {
        method: Method::GradXInput,
        target: Target::Auto,
        baseline: Baseline::TrainMean,
        ig_steps: 64,
        patch: (1, 1),
        selection: SelectionSpec {
            mode: SelectionMode::Worst,
            count: 2,
            split: Split::Val,
            seed: 0,
            indices: Vec::new(),
        },
    };
    let report = run_attribution(&registry, &ck, &prepared, &request).unwrap();
    for p in &report.points {
        assert_eq!(p.target_cell.0, 0);
        assert!(p.target_cell.1 < 2);
        assert!(p.output_at_x.is_finite());
    }

    // an out-of-range class is rejected
    let bad = AttributionRequest {
        target: Target::Class { index: 5 },
        ..request
    };
    assert!(matches!(
        run_attribution(&registry, &ck, &prepared, &bad),
        Err(InterpretError::Config(_))
    ));
}

#[test]
fn multi_cell_outputs_require_an_explicit_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let ds = dataset_from_columns(
        1,
        &[("x", ComponentRole::Input), ("y", ComponentRole::Output)],
        &[(0, rows)],
    );
    let task = TaskSpec {
        in_delays: (-2, 0),
        in_components: vec!["x".into()],
        out_delays: (0, 1),
        out_components: vec!["y".into()],
        kind: TaskKind::Regression,
        edge_policy: EdgePolicy::Drop,
    };
    let prepared = PreparedTask::prepare(ds, task, &PrepareOptions::default()).unwrap();
    let config = TrainConfig {
        max_epochs: 2,
        patience: 2,
        ..Default::default()
    };
    let ck = train(&prepared, &ArchSpec::new("mlp"), &config).unwrap();
    let registry = Registry::with_defaults();

    let mut request = AttributionRequest {
        method: Method::GradXInput,
        target: Target::Auto,
        baseline: Baseline::TrainMean,
        ig_steps: 64,
        patch: (1, 1),
        selection: SelectionSpec {
            mode: SelectionMode::Best,
            count: 1,
            split: Split::Val,
            seed: 0,
            indices: Vec::new(),
        },
    };
    assert!(matches!(
        run_attribution(&registry, &ck, &prepared, &request),
        Err(InterpretError::Config(_))
    ));

    // an explicit cell inside the 2×1 output works
    request.target = Target::Cell { row: 1, col: 0 };
    let report = run_attribution(&registry, &ck, &prepared, &request).unwrap();
    assert_eq!(report.points[0].target_cell, (1, 0));

    request.target = Target::Cell { row: 2, col: 0 };
    assert!(matches!(
        run_attribution(&registry, &ck, &prepared, &request),
        Err(InterpretError::Config(_))
    ));
}

#[test]
fn custom_baselines_are_shape_checked_and_used() {
    let prepared = lagged_prepared(80, 21);
    let config = TrainConfig {
        max_epochs: 2,
        patience: 2,
        ..Default::default()
    };
    let ck = train(&prepared, &ArchSpec::new("mlp"), &config).unwrap();
    let registry = Registry::with_defaults();

    let mut request = AttributionRequest {
        method: Method::IntegratedGradients,
        target: Target::Auto,
        baseline: Baseline::Custom(vec![vec![0.1], vec![0.2]]),
        ig_steps: 8,
        patch: (1, 1),
        selection: SelectionSpec {
            mode: SelectionMode::Best,
            count: 1,
            split: Split::Val,
            seed: 0,
            indices: Vec::new(),
        },
    };
    // wrong shape: the window is 3×1
    assert!(matches!(
        run_attribution(&registry, &ck, &prepared, &request),
        Err(InterpretError::Config(_))
    ));

    request.baseline = Baseline::Custom(vec![vec![0.1], vec![0.2], vec![0.3]]);
    let report = run_attribution(&registry, &ck, &prepared, &request).unwrap();
    assert_eq!(report.baseline.descriptor(), "custom");
    assert_eq!(report.points.len(), 1);
}

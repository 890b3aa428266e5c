//! Fully connected architectures: the MLP and a minimal linear example.

use super::{
    ArchDef, ArchError, ArchSpec, ForwardCx, ForwardImpl, Model, ParamBuilder, TaskShapes,
};
use crate::tensor::VarId;
use std::sync::Arc;

#[derive(Clone, Copy)]
enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn parse(s: &str) -> Result<Self, ArchError> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(ArchError::IncompatibleHyperparams(format!(
                "unknown activation `{other}` (expected relu, tanh, or sigmoid)"
            ))),
        }
    }

    fn apply(self, cx: &mut ForwardCx, v: VarId) -> VarId {
        match self {
            Self::Relu => cx.tape.relu(v),
            Self::Tanh => cx.tape.tanh(v),
            Self::Sigmoid => cx.tape.sigmoid(v),
        }
    }
}

/// Flattens the window and applies fully connected layers.
pub struct MlpDef;

struct MlpForward {
    /// (weight, bias) parameter indices per hidden layer.
    layers: Vec<(usize, usize)>,
    head: (usize, usize),
    activation: Activation,
    dropout: f64,
}

impl ArchDef for MlpDef {
    fn name(&self) -> &str {
        "mlp"
    }

    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError> {
        spec.check_keys(&["widths", "activation", "dropout"])?;
        let widths = spec.usize_list_or("widths", &[64])?;
        if widths.iter().any(|&w| w == 0) {
            return Err(ArchError::IncompatibleHyperparams(
                "layer widths must be positive".into(),
            ));
        }
        let activation = Activation::parse(&spec.str_or("activation", "relu")?)?;
        let dropout = spec.f64_or("dropout", 0.0)?;

        let mut b = ParamBuilder::new(seed);
        let mut layers = Vec::new();
        let mut prev = shapes.in_dim();
        for (i, &w) in widths.iter().enumerate() {
            let wi = b.uniform(&format!("layer{i}.weight"), &[prev, w], prev);
            let bi = b.zeros(&format!("layer{i}.bias"), &[w]);
            layers.push((wi, bi));
            prev = w;
        }
        let head = (
            b.uniform("head.weight", &[prev, shapes.out_dim()], prev),
            b.zeros("head.bias", &[shapes.out_dim()]),
        );

        Ok(Model::from_parts(
            spec.clone(),
            shapes,
            b.finish(),
            false,
            seed,
            Arc::new(MlpForward {
                layers,
                head,
                activation,
                dropout,
            }),
        ))
    }
}

impl ForwardImpl for MlpForward {
    fn forward(&self, cx: &mut ForwardCx) -> Result<VarId, ArchError> {
        // (B, L, C) -> (B, L·C): the whole batch in one matmul chain
        let mut h = cx.tape.flatten(cx.x);
        for &(w, bias) in &self.layers {
            h = cx.tape.matmul(h, cx.params[w])?;
            h = cx.tape.add(h, cx.params[bias])?;
            h = self.activation.apply(cx, h);
            h = cx.dropout(h, self.dropout)?;
        }
        h = cx.tape.matmul(h, cx.params[self.head.0])?;
        h = cx.tape.add(h, cx.params[self.head.1])?;
        let out = cx
            .tape
            .reshape(h, &[cx.batch, cx.shapes.out_rows, cx.shapes.out_cols])?;
        Ok(out)
    }
}

/// Single affine map on the flattened window; doubles as the registry's
/// reference example of a drop-in architecture.
pub struct LinearDef;

struct LinearForward;

impl ArchDef for LinearDef {
    fn name(&self) -> &str {
        "linear"
    }

    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError> {
        spec.check_keys(&[])?;
        let mut b = ParamBuilder::new(seed);
        b.uniform("weight", &[shapes.in_dim(), shapes.out_dim()], shapes.in_dim());
        b.zeros("bias", &[shapes.out_dim()]);
        Ok(Model::from_parts(
            spec.clone(),
            shapes,
            b.finish(),
            false,
            seed,
            Arc::new(LinearForward),
        ))
    }
}

impl ForwardImpl for LinearForward {
    fn forward(&self, cx: &mut ForwardCx) -> Result<VarId, ArchError> {
        let flat = cx.tape.flatten(cx.x);
        let h = cx.tape.matmul(flat, cx.params[0])?;
        let h = cx.tape.add(h, cx.params[1])?;
        let out = cx
            .tape
            .reshape(h, &[cx.batch, cx.shapes.out_rows, cx.shapes.out_cols])?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_model, gradient_check, ArchSpec, Registry, TaskShapes};
    use crate::tensor::Tensor;
    use crate::timebase::{EdgePolicy, TaskKind, TaskSpec};
    use serde_json::json;

    fn reg_task(a: i64, b: i64, c: i64, d: i64, n_in: usize) -> TaskSpec {
        TaskSpec {
            in_delays: (a, b),
            in_components: (0..n_in).map(|i| format!("x{i}")).collect(),
            out_delays: (c, d),
            out_components: vec!["y".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        }
    }

    #[test]
    fn parameter_count_closed_form() {
        // L_in=3, c_in=2, widths [8], out 1x1:
        // (6·8 + 8) + (8·1 + 1) = 65
        let task = reg_task(-2, 0, 1, 1, 2);
        let spec = ArchSpec::new("mlp").with("widths", json!([8]));
        let model = build_model(&spec, &task, 0).unwrap();
        assert_eq!(model.params.n_scalars(), 65);
    }

    #[test]
    fn same_seed_same_parameters() {
        let task = reg_task(-2, 0, 1, 1, 2);
        let spec = ArchSpec::new("mlp").with("widths", json!([8, 4]));
        let a = build_model(&spec, &task, 99).unwrap();
        let b = build_model(&spec, &task, 99).unwrap();
        for (x, y) in a.params.tensors.iter().zip(&b.params.tensors) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn identity_head_reproduces_input() {
        // no hidden layers, head = identity: output is the reshaped input
        let task = reg_task(-1, 0, 0, 1, 1); // in_dim = 2, out_dim = 2
        let spec = ArchSpec::new("mlp").with("widths", json!([]));
        let mut model = build_model(&spec, &task, 0).unwrap();
        let w = model.params.index_of("head.weight").unwrap();
        model.params.tensors[w].data = vec![1.0, 0.0, 0.0, 1.0];
        let x = Tensor::from_vec(&[1, 2, 1], vec![3.5, -2.0]);
        let y = model.predict(&x).unwrap();
        assert_eq!(y.shape, vec![1, 2, 1]);
        assert_eq!(y.data, vec![3.5, -2.0]);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let task = reg_task(-1, 0, 0, 0, 1);
        let spec = ArchSpec::new("mlp").with("widths", json!([]));
        let mut model = build_model(&spec, &task, 0).unwrap();
        let w = model.params.index_of("head.weight").unwrap();
        let b = model.params.index_of("head.bias").unwrap();
        model.params.tensors[w].data = vec![0.0, 0.0];
        model.params.tensors[b].data = vec![7.25];
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let y = model.predict(&x).unwrap();
        assert_eq!(y.data, vec![7.25, 7.25]);
    }

    #[test]
    fn random_mlp_passes_gradient_check() {
        let spec = ArchSpec::new("mlp")
            .with("widths", json!([6, 5]))
            .with("activation", json!("tanh"));
        let shapes = TaskShapes {
            l_in: 3,
            c_in: 2,
            out_rows: 2,
            out_cols: 1,
            classification: false,
        };
        let mut model = Registry::with_defaults().build(&spec, shapes, 11).unwrap();
        let x = super::super::random_input(shapes, 2, 4);
        gradient_check(&mut model, &x).unwrap();
    }

    #[test]
    fn linear_example_is_exactly_affine() {
        let task = reg_task(0, 0, 0, 0, 1);
        let spec = ArchSpec::new("linear");
        let mut reg = Registry::with_defaults();
        reg.register(std::sync::Arc::new(super::LinearDef)).unwrap();
        let mut model = reg.build_for_task(&spec, &task, 5).unwrap();
        model.params.tensors[0].data = vec![2.0];
        model.params.tensors[1].data = vec![-1.0];
        let x = Tensor::from_vec(&[3, 1, 1], vec![0.0, 1.0, 2.0]);
        let y = model.predict(&x).unwrap();
        assert_eq!(y.data, vec![-1.0, 1.0, 3.0]);
    }
}

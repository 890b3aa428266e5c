//! Recurrent architectures: the standard LSTM and the stabilized LSTMv2.
//!
//! Both run the classic cell recurrence (gates i, f, g, o) over the input
//! window. LSTMv2 adds per-step layer normalization on the gate
//! pre-activation sums and a residual connection around each layer, and can
//! carry (h, c) across calls: carried state is stored as raw values, so
//! gradients are truncated at call boundaries.

use super::{
    ArchDef, ArchError, ArchSpec, ForwardCx, ForwardImpl, Model, ParamBuilder, RecurrentState,
    TaskShapes,
};
use crate::matrix::Matrix;
use crate::tensor::{Tensor, VarId};
use std::sync::Arc;

struct LayerParams {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    /// Residual projection (LSTMv2) when input width ≠ hidden width.
    proj: Option<usize>,
}

struct LstmForward {
    layers: Vec<LayerParams>,
    head: (usize, usize),
    hidden: usize,
    dropout: f64,
    v2: bool,
    ln_eps: f64,
}

fn build_lstm_model(
    spec: &ArchSpec,
    shapes: TaskShapes,
    seed: u64,
    v2: bool,
) -> Result<Model, ArchError> {
    let mut allowed = vec!["hidden", "layers", "dropout"];
    if v2 {
        allowed.extend(["stateful", "ln_eps"]);
    }
    spec.check_keys(&allowed)?;
    let hidden = spec.usize_or("hidden", 32)?;
    let n_layers = spec.usize_or("layers", 1)?;
    if hidden == 0 || n_layers == 0 {
        return Err(ArchError::IncompatibleHyperparams(
            "hidden and layers must be positive".into(),
        ));
    }
    let dropout = spec.f64_or("dropout", 0.0)?;
    let stateful = v2 && spec.bool_or("stateful", false)?;
    let ln_eps = spec.f64_or("ln_eps", 1e-5)?;

    let mut b = ParamBuilder::new(seed);
    let mut layers = Vec::new();
    let mut in_dim = shapes.c_in;
    for l in 0..n_layers {
        let w_ih = b.uniform(&format!("layer{l}.w_ih"), &[in_dim, 4 * hidden], in_dim);
        let w_hh = b.uniform(&format!("layer{l}.w_hh"), &[hidden, 4 * hidden], hidden);
        // zero biases except the forget gate, stabilized at +1
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let bias = b.tensor(
            &format!("layer{l}.bias"),
            Tensor::from_vec(&[4 * hidden], bias),
        );
        let proj = (v2 && in_dim != hidden)
            .then(|| b.uniform(&format!("layer{l}.proj"), &[in_dim, hidden], in_dim));
        layers.push(LayerParams {
            w_ih,
            w_hh,
            bias,
            proj,
        });
        in_dim = hidden;
    }
    let head = (
        b.uniform("head.weight", &[hidden, shapes.out_dim()], hidden),
        b.zeros("head.bias", &[shapes.out_dim()]),
    );

    Ok(Model::from_parts(
        spec.clone(),
        shapes,
        b.finish(),
        stateful,
        seed,
        Arc::new(LstmForward {
            layers,
            head,
            hidden,
            dropout,
            v2,
            ln_eps,
        }),
    ))
}

impl ForwardImpl for LstmForward {
    fn forward(&self, cx: &mut ForwardCx) -> Result<VarId, ArchError> {
        let hd = self.hidden;
        let n_layers = self.layers.len();
        let seq_len = cx.shapes.l_in;
        // final (h, c) values per layer per lane, assembled when carrying
        let mut finals_h: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_layers];
        let mut finals_c: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_layers];
        let mut outputs = Vec::with_capacity(cx.batch);

        for bi in 0..cx.batch {
            let mut xs = cx.sample(bi)?;
            let mut head_in = None;
            for (li, layer) in self.layers.iter().enumerate() {
                let (h0, c0) = match (cx.carry, cx.state.as_ref()) {
                    (true, Some(st)) => (st.h[li].row(bi).to_vec(), st.c[li].row(bi).to_vec()),
                    _ => (vec![0.0; hd], vec![0.0; hd]),
                };
                let mut h = cx.tape.constant(Tensor::from_vec(&[1, hd], h0));
                let mut c = cx.tape.constant(Tensor::from_vec(&[1, hd], c0));
                let mut ys: Vec<VarId> = Vec::with_capacity(seq_len);
                for t in 0..seq_len {
                    let x_t = cx.tape.slice_rows(xs, t, t + 1)?;
                    let a_x = cx.tape.matmul(x_t, cx.params[layer.w_ih])?;
                    let a_h = cx.tape.matmul(h, cx.params[layer.w_hh])?;
                    let mut pre = cx.tape.add(a_x, a_h)?;
                    if self.v2 {
                        pre = cx.tape.layer_norm_rows(pre, self.ln_eps)?;
                    }
                    pre = cx.tape.add(pre, cx.params[layer.bias])?;
                    let i = cx.cols(pre, 0, hd)?;
                    let i = cx.tape.sigmoid(i);
                    let f = cx.cols(pre, hd, 2 * hd)?;
                    let f = cx.tape.sigmoid(f);
                    let g = cx.cols(pre, 2 * hd, 3 * hd)?;
                    let g = cx.tape.tanh(g);
                    let o = cx.cols(pre, 3 * hd, 4 * hd)?;
                    let o = cx.tape.sigmoid(o);
                    let fc = cx.tape.mul(f, c)?;
                    let ig = cx.tape.mul(i, g)?;
                    c = cx.tape.add(fc, ig)?;
                    let tc = cx.tape.tanh(c);
                    h = cx.tape.mul(o, tc)?;
                    let y = if self.v2 {
                        let res = match layer.proj {
                            Some(p) => cx.tape.matmul(x_t, cx.params[p])?,
                            None => x_t,
                        };
                        cx.tape.add(h, res)?
                    } else {
                        h
                    };
                    ys.push(y);
                }
                if cx.carry {
                    finals_h[li].push(cx.tape.value(h).data.clone());
                    finals_c[li].push(cx.tape.value(c).data.clone());
                }
                let mut seq = ys[0];
                for &y in &ys[1..] {
                    seq = cx.tape.concat(seq, y, 0)?;
                }
                if li + 1 < n_layers {
                    seq = cx.dropout(seq, self.dropout)?;
                }
                xs = seq;
                head_in = Some(*ys.last().expect("seq_len >= 1"));
            }
            let feat = head_in.expect("at least one layer");
            let mut y = cx.tape.matmul(feat, cx.params[self.head.0])?;
            y = cx.tape.add(y, cx.params[self.head.1])?;
            outputs.push(y);
        }

        if cx.carry {
            let to_mat = |rows: &Vec<Vec<f64>>| {
                let mut m = Matrix::zeros(cx.batch, hd);
                for (r, row) in rows.iter().enumerate() {
                    for (col, &v) in row.iter().enumerate() {
                        m.set(r, col, v);
                    }
                }
                m
            };
            *cx.state = Some(RecurrentState {
                h: finals_h.iter().map(to_mat).collect(),
                c: finals_c.iter().map(to_mat).collect(),
                batch: cx.batch,
            });
        }
        Ok(cx.stack(outputs)?)
    }
}

/// Standard stacked LSTM; head reads the last hidden state.
pub struct LstmDef;

impl ArchDef for LstmDef {
    fn name(&self) -> &str {
        "lstm"
    }

    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError> {
        build_lstm_model(spec, shapes, seed, false)
    }
}

/// LSTM with per-step layer normalization, residual layers, and optional
/// cross-call state carry.
pub struct LstmV2Def;

impl ArchDef for LstmV2Def {
    fn name(&self) -> &str {
        "lstm_v2"
    }

    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError> {
        build_lstm_model(spec, shapes, seed, true)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{
        build_model, gradient_check, random_input, ArchError, ArchSpec, ForwardOptions, Registry,
        TaskShapes,
    };
    use crate::tensor::Tensor;
    use crate::timebase::{EdgePolicy, TaskKind, TaskSpec};
    use serde_json::json;

    fn shapes(l_in: usize, c_in: usize) -> TaskShapes {
        TaskShapes {
            l_in,
            c_in,
            out_rows: 1,
            out_cols: 1,
            classification: false,
        }
    }

    fn small_spec(name: &str) -> ArchSpec {
        ArchSpec::new(name).with("hidden", json!(5))
    }

    #[test]
    fn zero_parameters_are_a_fixed_point() {
        // every gate pre-activation is 0, so c = σ(0)·tanh(0) = 0 and
        // h = σ(0)·tanh(0) = 0 at every step; a zero head then emits 0
        let task = TaskSpec {
            in_delays: (-3, 0),
            in_components: vec!["x".into()],
            out_delays: (1, 1),
            out_components: vec!["x".into()],
            kind: TaskKind::Regression,
            edge_policy: EdgePolicy::Drop,
        };
        let mut model = build_model(&small_spec("lstm"), &task, 3).unwrap();
        for t in &mut model.params.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_vec(&[1, 4, 1], vec![5.0, -3.0, 2.0, 8.0]);
        let y = model.predict(&x).unwrap();
        assert_eq!(y.data, vec![0.0]);
    }

    #[test]
    fn stateless_calls_are_pure() {
        let reg = Registry::with_defaults();
        for name in ["lstm", "lstm_v2"] {
            let mut model = reg.build(&small_spec(name), shapes(4, 2), 17).unwrap();
            let x = random_input(shapes(4, 2), 3, 1);
            let a = model.predict(&x).unwrap();
            let b = model.predict(&x).unwrap();
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn lstm_gradient_checks() {
        let reg = Registry::with_defaults();
        for name in ["lstm", "lstm_v2"] {
            let spec = small_spec(name).with("layers", json!(2));
            let s = shapes(3, 2);
            let mut model = reg.build(&spec, s, 23).unwrap();
            let x = random_input(s, 2, 9);
            gradient_check(&mut model, &x).unwrap();
        }
    }

    #[test]
    fn chunked_carry_equals_full_sequence() {
        // 12 steps as 3 carried chunks of 4 vs one length-12 pass;
        // identical weights because the parameter shapes don't depend on
        // the window length
        let reg = Registry::with_defaults();
        let spec = small_spec("lstm_v2")
            .with("stateful", json!(true))
            .with("layers", json!(2));
        let mut chunked = reg.build(&spec, shapes(4, 2), 31).unwrap();
        let mut full = reg.build(&spec, shapes(12, 2), 31).unwrap();
        for (a, b) in chunked.params.tensors.iter().zip(&full.params.tensors) {
            assert_eq!(a.data, b.data);
        }

        let x = random_input(shapes(12, 2), 1, 2);
        let y_full = full.predict(&x).unwrap();

        chunked.reset_state().unwrap();
        let mut y_last = None;
        for chunk in 0..3 {
            let part = Tensor::from_vec(
                &[1, 4, 2],
                x.data[chunk * 8..(chunk + 1) * 8].to_vec(),
            );
            let y = chunked
                .predict_opts(
                    &part,
                    ForwardOptions {
                        carry_state: true,
                        ..Default::default()
                    },
                )
                .unwrap();
            y_last = Some(y);
        }
        let diff = y_last.unwrap().max_abs_diff(&y_full);
        assert!(diff <= 1e-5, "chunked vs full differ by {diff}");
    }

    #[test]
    fn carry_rejects_batch_size_change() {
        let reg = Registry::with_defaults();
        let spec = small_spec("lstm_v2").with("stateful", json!(true));
        let mut model = reg.build(&spec, shapes(3, 1), 1).unwrap();
        let opts = ForwardOptions {
            carry_state: true,
            ..Default::default()
        };
        model
            .predict_opts(&random_input(shapes(3, 1), 2, 0), opts)
            .unwrap();
        let e = model.predict_opts(&random_input(shapes(3, 1), 3, 0), opts);
        assert!(matches!(e, Err(ArchError::StateShapeMismatch { expected: 2, got: 3 })));
        // reset clears the carried state and the next batch size is free
        model.reset_state().unwrap();
        model
            .predict_opts(&random_input(shapes(3, 1), 3, 0), opts)
            .unwrap();
    }

    #[test]
    fn reset_restores_fresh_behavior() {
        let reg = Registry::with_defaults();
        let spec = small_spec("lstm_v2").with("stateful", json!(true));
        let mut model = reg.build(&spec, shapes(3, 1), 12).unwrap();
        let x = random_input(shapes(3, 1), 1, 7);
        let opts = ForwardOptions {
            carry_state: true,
            ..Default::default()
        };
        let fresh = model.predict_opts(&x, opts).unwrap();
        // carried state makes the second call differ; reset restores it
        let carried = model.predict_opts(&x, opts).unwrap();
        assert_ne!(fresh.data, carried.data);
        model.reset_state().unwrap();
        let again = model.predict_opts(&x, opts).unwrap();
        assert_eq!(fresh.data, again.data);
    }

    #[test]
    fn state_carries_only_under_the_flag() {
        let reg = Registry::with_defaults();
        let spec = small_spec("lstm_v2").with("stateful", json!(true));
        let mut model = reg.build(&spec, shapes(3, 1), 12).unwrap();
        let x = random_input(shapes(3, 1), 1, 7);
        model.predict(&x).unwrap();
        assert!(model.state.is_none());
    }

    #[test]
    fn non_stateful_archs_reject_state_operations() {
        let task_shapes = shapes(3, 1);
        let reg = Registry::with_defaults();
        let mut mlp = reg.build(&ArchSpec::new("mlp"), task_shapes, 0).unwrap();
        assert!(matches!(mlp.reset_state(), Err(ArchError::NotStateful)));
        assert!(matches!(mlp.detach_state(), Err(ArchError::NotStateful)));

        // plain lstm_v2 without the stateful flag refuses to carry
        let mut v2 = reg.build(&small_spec("lstm_v2"), task_shapes, 0).unwrap();
        let e = v2.predict_opts(
            &random_input(task_shapes, 1, 0),
            ForwardOptions {
                carry_state: true,
                ..Default::default()
            },
        );
        assert!(matches!(e, Err(ArchError::NotStateful)));
    }
}

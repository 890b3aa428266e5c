//! Network architectures behind a uniform shape contract.
//!
//! Every model maps a batched input window `(B, L_in, c_in)` to
//! `(B, L_out, c_out)` for regression or `(B, 1, K)` logits for
//! classification. Architectures are looked up by name in a [`Registry`];
//! custom architectures register through the same interface and are vetted
//! by a conformance suite (shape, determinism, gradient checks) so the
//! trainer and interpreter can use them unmodified.

mod conv;
mod init;
mod lstm;
mod mlp;

pub use conv::{CnnDef, TcnDef};
pub use init::ParamBuilder;
pub use lstm::{LstmDef, LstmV2Def};
pub use mlp::{LinearDef, MlpDef};

use crate::matrix::Matrix;
use crate::tensor::{Tape, Tensor, TensorError, VarId};
use crate::timebase::{TaskKind, TaskSpec};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("duplicate architecture name `{0}`")]
    DuplicateName(String),
    #[error("incompatible hyperparameters: {0}")]
    IncompatibleHyperparams(String),
    #[error("contract violation ({check}): {detail}")]
    ContractViolation {
        check: &'static str,
        detail: String,
    },
    #[error("carried state is for batch size {expected}, got {got}; reset state or keep the batch size")]
    StateShapeMismatch { expected: usize, got: usize },
    #[error("architecture is not stateful")]
    NotStateful,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture name plus its hyperparameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub arch_name: String,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, serde_json::Value>,
}

impl ArchSpec {
    pub fn new(name: &str) -> Self {
        Self {
            arch_name: name.to_string(),
            hyperparams: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: serde_json::Value) -> Self {
        self.hyperparams.insert(key.to_string(), value);
        self
    }

    /// Rejects hyperparameter keys the architecture does not understand.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ArchError> {
        for key in self.hyperparams.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(ArchError::IncompatibleHyperparams(format!(
                    "unknown key `{key}` for `{}` (expected one of {allowed:?})",
                    self.arch_name
                )));
            }
        }
        Ok(())
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ArchError> {
        match self.hyperparams.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| bad_hyper(key, v, "a non-negative integer")),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ArchError> {
        match self.hyperparams.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| bad_hyper(key, v, "a number")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ArchError> {
        match self.hyperparams.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| bad_hyper(key, v, "a boolean")),
        }
    }

    pub fn str_or(&self, key: &str, default: &str) -> Result<String, ArchError> {
        match self.hyperparams.get(key) {
            None => Ok(default.to_string()),
            Some(v) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| bad_hyper(key, v, "a string")),
        }
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ArchError> {
        match self.hyperparams.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .as_array()
                .and_then(|a| {
                    a.iter()
                        .map(|x| x.as_u64().map(|u| u as usize))
                        .collect::<Option<Vec<_>>>()
                })
                .ok_or_else(|| bad_hyper(key, v, "a list of non-negative integers")),
        }
    }
}

fn bad_hyper(key: &str, v: &serde_json::Value, want: &str) -> ArchError {
    ArchError::IncompatibleHyperparams(format!("`{key}` must be {want}, got {v}"))
}

/// The input/output geometry a model must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShapes {
    pub l_in: usize,
    pub c_in: usize,
    /// Output rows: L_out for regression, 1 for classification.
    pub out_rows: usize,
    /// Output columns: c_out for regression, K for classification.
    pub out_cols: usize,
    pub classification: bool,
}

impl TaskShapes {
    pub fn from_task(task: &TaskSpec) -> Self {
        Self {
            l_in: task.l_in(),
            c_in: task.in_components.len(),
            out_rows: task.out_rows(),
            out_cols: task.out_cols(),
            classification: matches!(task.kind, TaskKind::Classification { .. }),
        }
    }

    /// Flattened output size out_rows · out_cols.
    pub fn out_dim(&self) -> usize {
        self.out_rows * self.out_cols
    }

    /// Flattened input size L_in · c_in.
    pub fn in_dim(&self) -> usize {
        self.l_in * self.c_in
    }
}

/// Ordered, named parameter tensors (insertion order is canonical).
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Total scalar parameter count.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Recurrent carry: one (h, c) pair per layer, one row per batch lane.
#[derive(Debug, Clone)]
pub struct RecurrentState {
    pub h: Vec<Matrix>,
    pub c: Vec<Matrix>,
    pub batch: usize,
}

/// Per-call forward switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Load carried state and store the final state back (stateful archs).
    pub carry_state: bool,
    /// Record named internal feature maps for inspection.
    pub collect_taps: bool,
}

/// Handles returned by a forward pass, all living on the caller's tape.
pub struct ModelPass {
    /// Output node, shape (B, out_rows, out_cols).
    pub output: VarId,
    /// The input leaf (receives gradient iff `x.requires_grad`).
    pub x_var: VarId,
    /// One leaf per parameter, aligned with `ParamSet` order.
    pub param_vars: Vec<VarId>,
    /// Named internal probes, populated when `collect_taps` is set.
    pub taps: Vec<(String, VarId)>,
}

/// Everything a forward implementation gets to work with.
pub struct ForwardCx<'a> {
    pub tape: &'a mut Tape,
    /// Input leaf, shape (B, L_in, c_in).
    pub x: VarId,
    pub batch: usize,
    pub shapes: TaskShapes,
    /// Parameter leaves, aligned with the model's `ParamSet`.
    pub params: &'a [VarId],
    /// Carried state slot; `Some` only when carrying is requested.
    pub state: &'a mut Option<RecurrentState>,
    pub carry: bool,
    pub taps: &'a mut Vec<(String, VarId)>,
    pub collect_taps: bool,
    /// Present while training with a non-zero dropout rate.
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

impl ForwardCx<'_> {
    /// Sample `b` of the input as a (L_in × c_in) node.
    pub fn sample(&mut self, b: usize) -> Result<VarId, TensorError> {
        let s = self.tape.slice_rows(self.x, b, b + 1)?;
        self.tape
            .reshape(s, &[self.shapes.l_in, self.shapes.c_in])
    }

    /// Stacks per-sample (out_rows × out_cols) nodes into (B, ...).
    pub fn stack(&mut self, per_sample: Vec<VarId>) -> Result<VarId, TensorError> {
        let (r, c) = (self.shapes.out_rows, self.shapes.out_cols);
        let mut acc: Option<VarId> = None;
        for v in per_sample {
            let v3 = self.tape.reshape(v, &[1, r, c])?;
            acc = Some(match acc {
                None => v3,
                Some(a) => self.tape.concat(a, v3, 0)?,
            });
        }
        Ok(acc.expect("at least one sample"))
    }

    pub fn tap(&mut self, name: String, v: VarId) {
        if self.collect_taps {
            self.taps.push((name, v));
        }
    }

    /// Columns start..end of a 2-D node (via transpose/slice/transpose).
    pub fn cols(&mut self, v: VarId, start: usize, end: usize) -> Result<VarId, TensorError> {
        let t = self.tape.transpose(v)?;
        let s = self.tape.slice_rows(t, start, end)?;
        self.tape.transpose(s)
    }

    /// Inverted dropout: active only while a dropout RNG is supplied.
    pub fn dropout(&mut self, v: VarId, rate: f64) -> Result<VarId, TensorError> {
        let Some(rng) = self.dropout_rng.as_deref_mut() else {
            return Ok(v);
        };
        if rate <= 0.0 {
            return Ok(v);
        }
        use rand::Rng;
        let shape = self.tape.shape(v).to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let m = self.tape.constant(Tensor::from_vec(&shape, mask));
        self.tape.mul(v, m)
    }
}

/// A forward graph builder for one architecture.
pub trait ForwardImpl: Send + Sync {
    fn forward(&self, cx: &mut ForwardCx) -> Result<VarId, ArchError>;
}

/// A parameterized architecture bound to task shapes.
#[derive(Clone)]
pub struct Model {
    pub spec: ArchSpec,
    pub shapes: TaskShapes,
    pub params: ParamSet,
    /// Carried recurrent state (raw values; gradients never cross calls).
    pub state: Option<RecurrentState>,
    /// Whether this model supports carrying state between calls.
    pub stateful: bool,
    /// Non-fatal configuration notes from the build (e.g. receptive field).
    pub warnings: Vec<String>,
    pub seed: u64,
    fwd: Arc<dyn ForwardImpl>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("spec", &self.spec)
            .field("shapes", &self.shapes)
            .field("n_params", &self.params.n_scalars())
            .field("stateful", &self.stateful)
            .finish()
    }
}

impl Model {
    pub fn from_parts(
        spec: ArchSpec,
        shapes: TaskShapes,
        params: ParamSet,
        stateful: bool,
        seed: u64,
        fwd: Arc<dyn ForwardImpl>,
    ) -> Self {
        Self {
            spec,
            shapes,
            params,
            state: None,
            stateful,
            warnings: Vec::new(),
            seed,
            fwd,
        }
    }

    /// Builds the forward graph for a batch on the caller's tape.
    ///
    /// `x` must be (B, L_in, c_in); set `x.requires_grad` to obtain input
    /// gradients. With `carry_state`, the carried state seeds the recurrence
    /// (zeros when absent) and the final state is stored back as raw values
    /// — gradient history never crosses calls.
    pub fn forward_on_tape(
        &mut self,
        tape: &mut Tape,
        x: &Tensor,
        opts: ForwardOptions,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelPass, ArchError> {
        let s = &x.shape;
        if s.len() != 3 || s[1] != self.shapes.l_in || s[2] != self.shapes.c_in {
            return Err(ArchError::Tensor(TensorError::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "input {s:?}, model expects (B, {}, {})",
                    self.shapes.l_in, self.shapes.c_in
                ),
            }));
        }
        let batch = s[0];
        if opts.carry_state && !self.stateful {
            return Err(ArchError::NotStateful);
        }
        if opts.carry_state {
            if let Some(st) = &self.state {
                if st.batch != batch {
                    return Err(ArchError::StateShapeMismatch {
                        expected: st.batch,
                        got: batch,
                    });
                }
            }
        }

        let x_var = tape.leaf(x);
        let param_vars: Vec<VarId> = self.params.tensors.iter().map(|t| tape.leaf(t)).collect();
        let mut taps = Vec::new();
        let fwd = Arc::clone(&self.fwd);
        let mut cx = ForwardCx {
            tape,
            x: x_var,
            batch,
            shapes: self.shapes,
            params: &param_vars,
            state: &mut self.state,
            carry: opts.carry_state,
            taps: &mut taps,
            collect_taps: opts.collect_taps,
            dropout_rng,
        };
        let output = fwd.forward(&mut cx)?;

        let got = tape.shape(output).to_vec();
        let want = [batch, self.shapes.out_rows, self.shapes.out_cols];
        if got != want {
            return Err(ArchError::ContractViolation {
                check: "shape",
                detail: format!("forward returned {got:?}, contract requires {want:?}"),
            });
        }
        Ok(ModelPass {
            output,
            x_var,
            param_vars,
            taps,
        })
    }

    /// Stateless forward returning just the output values.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor, ArchError> {
        self.predict_opts(x, ForwardOptions::default())
    }

    pub fn predict_opts(&mut self, x: &Tensor, opts: ForwardOptions) -> Result<Tensor, ArchError> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, x, opts, None)?;
        Ok(tape.value(pass.output).clone())
    }

    /// Clears the recurrent carry; the next carried call starts from zeros.
    pub fn reset_state(&mut self) -> Result<(), ArchError> {
        if !self.stateful {
            return Err(ArchError::NotStateful);
        }
        self.state = None;
        Ok(())
    }

    /// Truncated-backpropagation boundary. Carried state is stored as raw
    /// values, so the gradient cut already holds; this is the explicit
    /// marker (and errors on non-stateful models).
    pub fn detach_state(&mut self) -> Result<(), ArchError> {
        if !self.stateful {
            return Err(ArchError::NotStateful);
        }
        Ok(())
    }

    /// Keeps only the first `batch` carried-state lanes. When chronological
    /// batches assign point `k·B + b` to lane `b`, a final batch smaller
    /// than B continues exactly the leading lanes; the rest simply end.
    pub fn truncate_state(&mut self, batch: usize) -> Result<(), ArchError> {
        if !self.stateful {
            return Err(ArchError::NotStateful);
        }
        if let Some(st) = &mut self.state {
            if batch < st.batch {
                for m in st.h.iter_mut().chain(st.c.iter_mut()) {
                    m.data.truncate(batch * m.cols);
                    m.rows = batch;
                }
                st.batch = batch;
            }
        }
        Ok(())
    }
}

/// Builds models from specs; conformance-checked entry point for customs.
pub trait ArchDef: Send + Sync {
    fn name(&self) -> &str;
    fn build(&self, spec: &ArchSpec, shapes: TaskShapes, seed: u64) -> Result<Model, ArchError>;
    /// Spec used by the conformance suite (override if the architecture
    /// needs non-default hyperparameters to build).
    fn conformance_spec(&self) -> ArchSpec {
        ArchSpec::new(self.name())
    }
}

/// Name → architecture constructor table.
pub struct Registry {
    entries: BTreeMap<String, Arc<dyn ArchDef>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The five built-in architectures.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        for def in [
            Arc::new(MlpDef) as Arc<dyn ArchDef>,
            Arc::new(CnnDef),
            Arc::new(TcnDef),
            Arc::new(LstmDef),
            Arc::new(LstmV2Def),
        ] {
            r.entries.insert(def.name().to_string(), def);
        }
        r
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn ArchDef>> {
        self.entries.get(name).cloned()
    }

    /// Registers a custom architecture after it passes the conformance
    /// suite (shape, determinism, and gradient checks).
    pub fn register(&mut self, def: Arc<dyn ArchDef>) -> Result<(), ArchError> {
        if self.entries.contains_key(def.name()) {
            return Err(ArchError::DuplicateName(def.name().to_string()));
        }
        run_conformance(def.as_ref())?;
        self.entries.insert(def.name().to_string(), def);
        Ok(())
    }

    pub fn build(
        &self,
        spec: &ArchSpec,
        shapes: TaskShapes,
        seed: u64,
    ) -> Result<Model, ArchError> {
        let def = self
            .entries
            .get(&spec.arch_name)
            .ok_or_else(|| ArchError::UnknownArchitecture(spec.arch_name.clone()))?;
        def.build(spec, shapes, seed)
    }

    pub fn build_for_task(
        &self,
        spec: &ArchSpec,
        task: &TaskSpec,
        seed: u64,
    ) -> Result<Model, ArchError> {
        self.build(spec, TaskShapes::from_task(task), seed)
    }
}

/// Builds a model from the default registry.
pub fn build_model(spec: &ArchSpec, task: &TaskSpec, seed: u64) -> Result<Model, ArchError> {
    Registry::with_defaults().build_for_task(spec, task, seed)
}

pub(crate) fn random_input(shapes: TaskShapes, batch: usize, seed: u64) -> Tensor {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch * shapes.l_in * shapes.c_in;
    Tensor::from_vec(
        &[batch, shapes.l_in, shapes.c_in],
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
    )
}

/// The registration conformance suite: determinism of build and forward,
/// output shape, and analytic-vs-finite-difference gradients, on one
/// regression and one classification geometry.
pub fn run_conformance(def: &dyn ArchDef) -> Result<(), ArchError> {
    let cases = [
        TaskShapes {
            l_in: 4,
            c_in: 2,
            out_rows: 2,
            out_cols: 1,
            classification: false,
        },
        TaskShapes {
            l_in: 3,
            c_in: 1,
            out_rows: 1,
            out_cols: 3,
            classification: true,
        },
    ];
    let spec = def.conformance_spec();
    for (case_no, shapes) in cases.into_iter().enumerate() {
        let violation = |check: &'static str, detail: String| ArchError::ContractViolation {
            check,
            detail: format!("case {case_no}: {detail}"),
        };

        let mut model = def.build(&spec, shapes, 7)?;
        let again = def.build(&spec, shapes, 7)?;
        for (a, b) in model.params.tensors.iter().zip(&again.params.tensors) {
            if a.data != b.data {
                return Err(violation(
                    "determinism",
                    "same seed produced different parameters".into(),
                ));
            }
        }

        let x = random_input(shapes, 2, 3);
        // the shape contract is enforced inside forward_on_tape
        let y1 = model
            .predict(&x)
            .map_err(|e| violation("shape", e.to_string()))?;
        let y2 = model.predict(&x).map_err(|e| violation("shape", e.to_string()))?;
        if y1.data != y2.data {
            return Err(violation(
                "determinism",
                "same input produced different outputs".into(),
            ));
        }

        gradient_check(&mut model, &x).map_err(|detail| violation("gradient", detail))?;
    }
    Ok(())
}

/// Central finite differences against analytic gradients, on a thin probe
/// of input and parameter coordinates. Returns a description on failure.
pub fn gradient_check(model: &mut Model, x: &Tensor) -> Result<(), String> {
    let h = 1e-4;
    let loss_of = |model: &mut Model, x: &Tensor| -> Result<f64, String> {
        let mut tape = Tape::new();
        let pass = model
            .forward_on_tape(&mut tape, x, ForwardOptions::default(), None)
            .map_err(|e| e.to_string())?;
        let loss = tape.sum(pass.output);
        Ok(tape.value(loss).item())
    };

    // analytic gradients
    let mut xg = x.clone().with_grad();
    let mut tape = Tape::new();
    let pass = model
        .forward_on_tape(&mut tape, &xg, ForwardOptions::default(), None)
        .map_err(|e| e.to_string())?;
    let loss = tape.sum(pass.output);
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;
    let x_grad = grads.wrt(pass.x_var).to_vec();
    let param_grads: Vec<Vec<f64>> = pass
        .param_vars
        .iter()
        .map(|&v| grads.wrt(v).to_vec())
        .collect();

    let agree = |analytic: f64, numeric: f64| {
        let diff = (analytic - numeric).abs();
        diff < 1e-7 || diff / analytic.abs().max(numeric.abs()) < 1e-4
    };

    // probe a handful of input coordinates
    let stride = (x.numel() / 6).max(1);
    for i in (0..x.numel()).step_by(stride) {
        let mut plus = xg.data.clone();
        let mut minus = xg.data.clone();
        plus[i] += h;
        minus[i] -= h;
        let fp = loss_of(model, &Tensor::from_vec(&x.shape, plus))?;
        let fm = loss_of(model, &Tensor::from_vec(&x.shape, minus))?;
        let numeric = (fp - fm) / (2.0 * h);
        if !agree(x_grad[i], numeric) {
            return Err(format!(
                "input grad [{i}]: analytic {} vs numeric {numeric}",
                x_grad[i]
            ));
        }
    }
    xg.grad = None;

    // probe a handful of coordinates in every parameter tensor
    for p in 0..model.params.len() {
        let n = model.params.tensors[p].numel();
        let stride = (n / 4).max(1);
        for i in (0..n).step_by(stride) {
            let orig = model.params.tensors[p].data[i];
            model.params.tensors[p].data[i] = orig + h;
            let fp = loss_of(model, x)?;
            model.params.tensors[p].data[i] = orig - h;
            let fm = loss_of(model, x)?;
            model.params.tensors[p].data[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            if !agree(param_grads[p][i], numeric) {
                return Err(format!(
                    "param `{}` grad [{i}]: analytic {} vs numeric {numeric}",
                    model.params.names[p], param_grads[p][i]
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_architecture_is_reported() {
        let reg = Registry::with_defaults();
        let spec = ArchSpec::new("perceptron9000");
        let shapes = TaskShapes {
            l_in: 2,
            c_in: 1,
            out_rows: 1,
            out_cols: 1,
            classification: false,
        };
        assert!(matches!(
            reg.build(&spec, shapes, 0),
            Err(ArchError::UnknownArchitecture(n)) if n == "perceptron9000"
        ));
    }

    #[test]
    fn defaults_are_registered() {
        let reg = Registry::with_defaults();
        assert_eq!(reg.names(), vec!["cnn", "lstm", "lstm_v2", "mlp", "tcn"]);
    }

    #[test]
    fn registering_linear_example_passes_conformance() {
        let mut reg = Registry::with_defaults();
        reg.register(Arc::new(LinearDef)).unwrap();
        assert!(reg.contains("linear"));
        // duplicate registration is rejected
        let e = reg.register(Arc::new(LinearDef));
        assert!(matches!(e, Err(ArchError::DuplicateName(_))));
    }

    #[test]
    fn conformance_rejects_wrong_output_shape() {
        struct BrokenDef;
        struct BrokenForward;
        impl ForwardImpl for BrokenForward {
            fn forward(&self, cx: &mut ForwardCx) -> Result<VarId, ArchError> {
                // one output row regardless of the contract
                let out = cx
                    .tape
                    .constant(Tensor::zeros(&[cx.batch, 1, cx.shapes.out_cols]));
                Ok(out)
            }
        }
        impl ArchDef for BrokenDef {
            fn name(&self) -> &str {
                "broken"
            }
            fn build(
                &self,
                spec: &ArchSpec,
                shapes: TaskShapes,
                seed: u64,
            ) -> Result<Model, ArchError> {
                Ok(Model::from_parts(
                    spec.clone(),
                    shapes,
                    ParamSet::default(),
                    false,
                    seed,
                    Arc::new(BrokenForward),
                ))
            }
        }
        let mut reg = Registry::empty();
        let e = reg.register(Arc::new(BrokenDef));
        assert!(
            matches!(e, Err(ArchError::ContractViolation { check: "shape", .. })),
            "got {e:?}"
        );
    }

    #[test]
    fn unknown_hyperparameter_key_is_rejected() {
        let spec = ArchSpec::new("mlp").with("widhts", serde_json::json!([8]));
        let shapes = TaskShapes {
            l_in: 2,
            c_in: 1,
            out_rows: 1,
            out_cols: 1,
            classification: false,
        };
        let e = Registry::with_defaults().build(&spec, shapes, 0);
        assert!(matches!(e, Err(ArchError::IncompatibleHyperparams(_))));
    }
}

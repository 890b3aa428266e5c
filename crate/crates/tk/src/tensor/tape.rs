//! The recording tape: a Wengert list of primitive applications.
//!
//! Nodes are appended in topological order (every node's inputs precede
//! it), so the backward pass is a single reverse sweep. A tape lives for
//! one forward pass and is consumed by [`Tape::backward`].

use super::{shape_err, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(VarId, VarId),
    /// `broadcast_b`: b is a row vector added to every row of a.
    Add { a: VarId, b: VarId, broadcast_b: bool },
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    /// Concatenation along axis 0 (`a_rows` leading rows) or axis 1
    /// (`a_cols` leading columns of a 2-D pair).
    ConcatRows { a: VarId, b: VarId, a_rows: usize },
    ConcatCols { a: VarId, b: VarId, a_cols: usize },
    SliceRows { a: VarId, start: usize },
    Reshape(VarId),
    Transpose(VarId),
    Sum(VarId),
    Mean(VarId),
    MeanRows(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Relu(VarId),
    Log(VarId),
    Exp(VarId),
    Abs(VarId),
    SoftmaxRows(VarId),
    LogSoftmaxRows(VarId),
    LayerNormRows { a: VarId, eps: f64 },
    Conv1d { x: VarId, kernels: VarId, dilation: usize, causal: bool },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Records primitive applications for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf; gradient flows to it iff
    /// `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> VarId {
        self.push(t.clone(), t.requires_grad, Op::Leaf)
    }

    /// Registers a value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> VarId {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, v: VarId) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims2(&self, op: &'static str, v: VarId) -> Result<(usize, usize), TensorError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(shape_err(op, format!("expected 2-D, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    // --- primitives -----------------------------------------------------

    /// (m × k) @ (k × n) -> (m × n)
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (m, ka) = self.dims2("matmul", a)?;
        let (kb, n) = self.dims2("matmul", b)?;
        if ka != kb {
            return Err(shape_err(
                "matmul",
                format!("inner dims differ: {m}x{ka} @ {kb}x{n}"),
            ));
        }
        let av = &self.nodes[a.0].value.data;
        let bv = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..ka {
                let x = av[i * ka + p];
                if x == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += x * bv[p * n + j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(&[m, n], out), needs, Op::Matmul(a, b)))
    }

    /// Element-wise sum. `b` may also be a length-n vector (or 1 × n row)
    /// broadcast over the rows of a 2-D `a`.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let broadcast = sa != sb;
        if broadcast {
            let cols = *sa.last().unwrap_or(&0);
            let b_is_row = sb == [cols] || sb == [1, cols];
            if sa.len() != 2 || !b_is_row {
                return Err(shape_err("add", format!("{sa:?} + {sb:?}")));
            }
        }
        let (rows, cols) = if broadcast {
            (sa[0], sa[1])
        } else {
            (1, self.nodes[a.0].value.numel())
        };
        let av = &self.nodes[a.0].value.data;
        let bv = &self.nodes[b.0].value.data;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(av[r * cols + c] + bv[c]);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_vec(&sa, out),
            needs,
            Op::Add {
                a,
                b,
                broadcast_b: broadcast,
            },
        ))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) {
            return Err(shape_err(
                "sub",
                format!("{:?} - {:?}", sa, self.shape(b)),
            ));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(&sa, out), needs, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) {
            return Err(shape_err(
                "mul",
                format!("{:?} * {:?}", sa, self.shape(b)),
            ));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(&sa, out), needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: VarId, factor: f64) -> VarId {
        let t = &self.nodes[a.0].value;
        let out = Tensor::from_vec(&t.shape.clone(), t.data.iter().map(|x| x * factor).collect());
        let needs = self.needs(a);
        self.push(out, needs, Op::Scale(a, factor))
    }

    /// Concatenation along `axis` (0: stack rows; 1: widen columns, 2-D only).
    pub fn concat(&mut self, a: VarId, b: VarId, axis: usize) -> Result<VarId, TensorError> {
        match axis {
            0 => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
                    return Err(shape_err("concat", format!("axis 0: {sa:?} ++ {sb:?}")));
                }
                let mut shape = sa.clone();
                shape[0] = sa[0] + sb[0];
                let mut data = self.nodes[a.0].value.data.clone();
                data.extend_from_slice(&self.nodes[b.0].value.data);
                let needs = self.needs(a) || self.needs(b);
                Ok(self.push(
                    Tensor::from_vec(&shape, data),
                    needs,
                    Op::ConcatRows { a, b, a_rows: sa[0] },
                ))
            }
            1 => {
                let (ra, ca) = self.dims2("concat", a)?;
                let (rb, cb) = self.dims2("concat", b)?;
                if ra != rb {
                    return Err(shape_err(
                        "concat",
                        format!("axis 1: {ra}x{ca} ++ {rb}x{cb}"),
                    ));
                }
                let av = &self.nodes[a.0].value.data;
                let bv = &self.nodes[b.0].value.data;
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for r in 0..ra {
                    data.extend_from_slice(&av[r * ca..(r + 1) * ca]);
                    data.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
                }
                let needs = self.needs(a) || self.needs(b);
                Ok(self.push(
                    Tensor::from_vec(&[ra, ca + cb], data),
                    needs,
                    Op::ConcatCols { a, b, a_cols: ca },
                ))
            }
            _ => Err(shape_err("concat", format!("unsupported axis {axis}"))),
        }
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_rows(&mut self, a: VarId, start: usize, end: usize) -> Result<VarId, TensorError> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start >= end || end > s[0] {
            return Err(shape_err(
                "slice_rows",
                format!("range {start}..{end} of shape {s:?}"),
            ));
        }
        let stride: usize = s[1..].iter().product::<usize>().max(1);
        let mut shape = s.clone();
        shape[0] = end - start;
        let data = self.nodes[a.0].value.data[start * stride..end * stride].to_vec();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_vec(&shape, data),
            needs,
            Op::SliceRows { a, start },
        ))
    }

    /// Collapses all trailing axes: (d0, d1, ..., dk) -> (d0, d1*...*dk).
    /// A 1-D input becomes a single row.
    pub fn flatten(&mut self, a: VarId) -> VarId {
        let s = self.shape(a).to_vec();
        let shape = if s.len() <= 1 {
            vec![1, s.first().copied().unwrap_or(0)]
        } else {
            vec![s[0], s[1..].iter().product()]
        };
        let data = self.nodes[a.0].value.data.clone();
        let needs = self.needs(a);
        self.push(Tensor::from_vec(&shape, data), needs, Op::Reshape(a))
    }

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId, TensorError> {
        let numel = self.nodes[a.0].value.numel();
        if shape.iter().product::<usize>() != numel {
            return Err(shape_err(
                "reshape",
                format!("{numel} elements into {shape:?}"),
            ));
        }
        let data = self.nodes[a.0].value.data.clone();
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_vec(shape, data), needs, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId, TensorError> {
        let (m, n) = self.dims2("transpose", a)?;
        let av = &self.nodes[a.0].value.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_vec(&[n, m], out), needs, Op::Transpose(a)))
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let total: f64 = self.nodes[a.0].value.data.iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), needs, Op::Sum(a))
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let t = &self.nodes[a.0].value;
        let m = t.data.iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(m), needs, Op::Mean(a))
    }

    /// Column-wise mean over the rows of (m × n): result (1 × n).
    pub fn mean_rows(&mut self, a: VarId) -> Result<VarId, TensorError> {
        let (m, n) = self.dims2("mean_rows", a)?;
        let av = &self.nodes[a.0].value.data;
        let mut out = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                out[c] += av[r * n + c];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_vec(&[1, n], out), needs, Op::MeanRows(a)))
    }

    fn unary(&mut self, a: VarId, f: impl Fn(f64) -> f64, op: Op) -> VarId {
        let t = &self.nodes[a.0].value;
        let out = Tensor::from_vec(&t.shape.clone(), t.data.iter().map(|&x| f(x)).collect());
        let needs = self.needs(a);
        self.push(out, needs, op)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn log(&mut self, a: VarId) -> VarId {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Row-wise softmax of (m × n), max-shifted for stability.
    pub fn softmax_rows(&mut self, a: VarId) -> Result<VarId, TensorError> {
        let (m, n) = self.dims2("softmax_rows", a)?;
        let av = &self.nodes[a.0].value.data;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &av[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..n {
                let e = (row[c] - max).exp();
                out[r * n + c] = e;
                denom += e;
            }
            for c in 0..n {
                out[r * n + c] /= denom;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_vec(&[m, n], out), needs, Op::SoftmaxRows(a)))
    }

    /// Row-wise log-softmax; numerically stable counterpart for losses.
    pub fn log_softmax_rows(&mut self, a: VarId) -> Result<VarId, TensorError> {
        let (m, n) = self.dims2("log_softmax_rows", a)?;
        let av = &self.nodes[a.0].value.data;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &av[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for c in 0..n {
                out[r * n + c] = row[c] - lse;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_vec(&[m, n], out),
            needs,
            Op::LogSoftmaxRows(a),
        ))
    }

    /// Normalizes each row of (m × n) to zero mean and unit variance
    /// (population variance, stabilized by `eps`). No learned affine.
    pub fn layer_norm_rows(&mut self, a: VarId, eps: f64) -> Result<VarId, TensorError> {
        let (m, n) = self.dims2("layer_norm_rows", a)?;
        let av = &self.nodes[a.0].value.data;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &av[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..n {
                out[r * n + c] = (row[c] - mean) * inv;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_vec(&[m, n], out),
            needs,
            Op::LayerNormRows { a, eps },
        ))
    }

    /// One-dimensional convolution across the time (row) axis.
    ///
    /// `x`: (L × C_in), `kernels`: (k, C_in, C_out).
    /// Causal: left zero-padding of (k−1)·dilation keeps length L.
    /// Non-causal: no padding; output length L − (k−1)·dilation.
    pub fn conv1d(
        &mut self,
        x: VarId,
        kernels: VarId,
        dilation: usize,
        causal: bool,
    ) -> Result<VarId, TensorError> {
        if dilation == 0 {
            return Err(TensorError::NonPositiveDilation);
        }
        let (len, c_in) = self.dims2("conv1d", x)?;
        let ks = self.shape(kernels).to_vec();
        if ks.len() != 3 || ks[1] != c_in {
            return Err(shape_err(
                "conv1d",
                format!("kernels {ks:?} vs input (L={len}, C_in={c_in})"),
            ));
        }
        let (k, c_out) = (ks[0], ks[2]);
        let reach = (k - 1) * dilation;
        let out_len = if causal {
            len
        } else {
            if reach + 1 > len {
                return Err(shape_err(
                    "conv1d",
                    format!("kernel span {} exceeds length {len}", reach + 1),
                ));
            }
            len - reach
        };
        let xv = &self.nodes[x.0].value.data;
        let wv = &self.nodes[kernels.0].value.data;
        let mut out = vec![0.0; out_len * c_out];
        for t in 0..out_len {
            for j in 0..k {
                // causal taps read positions t - (k-1-j)*dilation (zero
                // when negative); non-causal taps read t + j*dilation.
                let src = if causal {
                    let p = t as isize - ((k - 1 - j) * dilation) as isize;
                    if p < 0 {
                        continue;
                    }
                    p as usize
                } else {
                    t + j * dilation
                };
                for ci in 0..c_in {
                    let xval = xv[src * c_in + ci];
                    if xval == 0.0 {
                        continue;
                    }
                    for co in 0..c_out {
                        out[t * c_out + co] += wv[(j * c_in + ci) * c_out + co] * xval;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(kernels);
        Ok(self.push(
            Tensor::from_vec(&[out_len, c_out], out),
            needs,
            Op::Conv1d {
                x,
                kernels,
                dilation,
                causal,
            },
        ))
    }

    // --- backward --------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Consumes the tape; gradients for
    /// every node are available on the returned [`Gradients`]. Leaves that
    /// are not connected to `loss` end up with zero gradient.
    pub fn backward(self, loss: VarId) -> Result<Gradients, TensorError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar(
                self.nodes[loss.0].value.shape.clone(),
            ));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.numel()])
            .collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            // split off the upstream gradient to appease the borrow checker
            let g = std::mem::take(&mut grads[idx]);
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = g;
        }

        Ok(Gradients {
            values: self.nodes.into_iter().map(|n| n.value).collect(),
            grads,
        })
    }

    fn accumulate(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let val = |v: VarId| &self.nodes[v.0].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (val(*a).shape[0], val(*a).shape[1]);
                let n = val(*b).shape[1];
                if self.needs(*a) {
                    // dA = g @ B^T
                    let bv = &val(*b).data;
                    let ga = &mut grads[a.0];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                if self.needs(*b) {
                    // dB = A^T @ g
                    let av = &val(*a).data;
                    let gb = &mut grads[b.0];
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * g[i * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                }
            }
            Op::Add { a, b, broadcast_b } => {
                if self.needs(*a) {
                    for (ga, gi) in grads[a.0].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
                if self.needs(*b) {
                    if *broadcast_b {
                        let cols = val(*b).numel();
                        let gb = &mut grads[b.0];
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % cols] += gi;
                        }
                    } else {
                        for (gb, gi) in grads[b.0].iter_mut().zip(g) {
                            *gb += gi;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    for (ga, gi) in grads[a.0].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
                if self.needs(*b) {
                    for (gb, gi) in grads[b.0].iter_mut().zip(g) {
                        *gb -= gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = &val(*b).data;
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let av = &val(*a).data;
                    for i in 0..g.len() {
                        grads[b.0][i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, f) => {
                if self.needs(*a) {
                    for (ga, gi) in grads[a.0].iter_mut().zip(g) {
                        *ga += gi * f;
                    }
                }
            }
            Op::ConcatRows { a, b, a_rows } => {
                let stride: usize = val(*a).shape[1..].iter().product::<usize>().max(1);
                let split = a_rows * stride;
                if self.needs(*a) {
                    for (ga, gi) in grads[a.0].iter_mut().zip(&g[..split]) {
                        *ga += gi;
                    }
                }
                if self.needs(*b) {
                    for (gb, gi) in grads[b.0].iter_mut().zip(&g[split..]) {
                        *gb += gi;
                    }
                }
            }
            Op::ConcatCols { a, b, a_cols } => {
                let rows = val(*a).shape[0];
                let ca = *a_cols;
                let cb = val(*b).shape[1];
                for r in 0..rows {
                    if self.needs(*a) {
                        for c in 0..ca {
                            grads[a.0][r * ca + c] += g[r * (ca + cb) + c];
                        }
                    }
                    if self.needs(*b) {
                        for c in 0..cb {
                            grads[b.0][r * cb + c] += g[r * (ca + cb) + ca + c];
                        }
                    }
                }
            }
            Op::SliceRows { a, start } => {
                if self.needs(*a) {
                    let stride: usize = val(*a).shape[1..].iter().product::<usize>().max(1);
                    let offset = start * stride;
                    for (i, gi) in g.iter().enumerate() {
                        grads[a.0][offset + i] += gi;
                    }
                }
            }
            Op::Reshape(a) => {
                if self.needs(*a) {
                    for (ga, gi) in grads[a.0].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                    for i in 0..m {
                        for j in 0..n {
                            grads[a.0][i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    for ga in grads[a.0].iter_mut() {
                        *ga += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if self.needs(*a) {
                    let inv = 1.0 / val(*a).numel() as f64;
                    for ga in grads[a.0].iter_mut() {
                        *ga += g[0] * inv;
                    }
                }
            }
            Op::MeanRows(a) => {
                if self.needs(*a) {
                    let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                    let inv = 1.0 / m as f64;
                    for r in 0..m {
                        for c in 0..n {
                            grads[a.0][r * n + c] += g[c] * inv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[idx].value.data;
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[idx].value.data;
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let x = &val(*a).data;
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            grads[a.0][i] += g[i];
                        }
                    }
                }
            }
            Op::Log(a) => {
                if self.needs(*a) {
                    let x = &val(*a).data;
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] / x[i];
                    }
                }
            }
            Op::Exp(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[idx].value.data;
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * y[i];
                    }
                }
            }
            Op::Abs(a) => {
                if self.needs(*a) {
                    let x = &val(*a).data;
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * x[i].signum() * (x[i] != 0.0) as u8 as f64;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[idx].value.data;
                    let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                    for r in 0..m {
                        let dot: f64 =
                            (0..n).map(|c| y[r * n + c] * g[r * n + c]).sum();
                        for c in 0..n {
                            grads[a.0][r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[idx].value.data; // log-probs
                    let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                    for r in 0..m {
                        let gsum: f64 = (0..n).map(|c| g[r * n + c]).sum();
                        for c in 0..n {
                            grads[a.0][r * n + c] +=
                                g[r * n + c] - y[r * n + c].exp() * gsum;
                        }
                    }
                }
            }
            Op::LayerNormRows { a, eps } => {
                if self.needs(*a) {
                    let x = &val(*a).data;
                    let y = &self.nodes[idx].value.data; // normalized rows
                    let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                    for r in 0..m {
                        let row = &x[r * n..(r + 1) * n];
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean: f64 = (0..n).map(|c| g[r * n + c]).sum::<f64>() / n as f64;
                        let gx_mean: f64 = (0..n)
                            .map(|c| g[r * n + c] * y[r * n + c])
                            .sum::<f64>()
                            / n as f64;
                        for c in 0..n {
                            grads[a.0][r * n + c] +=
                                inv * (g[r * n + c] - g_mean - y[r * n + c] * gx_mean);
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                kernels,
                dilation,
                causal,
            } => {
                let (len, c_in) = (val(*x).shape[0], val(*x).shape[1]);
                let (k, c_out) = (val(*kernels).shape[0], val(*kernels).shape[2]);
                let out_len = self.nodes[idx].value.shape[0];
                let xv = &val(*x).data;
                let wv = &val(*kernels).data;
                for t in 0..out_len {
                    for j in 0..k {
                        let src = if *causal {
                            let p = t as isize - ((k - 1 - j) * dilation) as isize;
                            if p < 0 {
                                continue;
                            }
                            p as usize
                        } else {
                            t + j * dilation
                        };
                        debug_assert!(src < len);
                        for ci in 0..c_in {
                            for co in 0..c_out {
                                let gi = g[t * c_out + co];
                                if self.needs(*x) {
                                    grads[x.0][src * c_in + ci] +=
                                        gi * wv[(j * c_in + ci) * c_out + co];
                                }
                                if self.needs(*kernels) {
                                    grads[kernels.0][(j * c_in + ci) * c_out + co] +=
                                        gi * xv[src * c_in + ci];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Result of a backward pass: node values plus their gradients.
pub struct Gradients {
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn value(&self, v: VarId) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient entries for `v`, same layout as its value.
    pub fn wrt(&self, v: VarId) -> &[f64] {
        &self.grads[v.0]
    }

    pub fn grad_tensor(&self, v: VarId) -> Tensor {
        Tensor::from_vec(&self.values[v.0].shape.clone(), self.grads[v.0].clone())
    }

    /// Writes the gradient for `v` into `t.grad`.
    pub fn assign(&self, v: VarId, t: &mut Tensor) {
        debug_assert_eq!(t.shape, self.values[v.0].shape);
        t.grad = Some(self.grads[v.0].clone());
    }
}

//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! The engine covers the fixed set of operations the encoder and the
//! compatibility network are built from. Values on the tape are 2-d
//! (`rows × cols`); vectors are stored as a single row and scalars as `1 × 1`.
//!
//! Forward passes record each operation on a [`Tape`]. [`Tape::backward`]
//! walks the records once in reverse order and returns [`Gradients`] for every
//! node reachable from the loss that depends on a `requires_grad` leaf.

mod params;

pub use params::{Bound, ParamFile, ParamId, ParamSet, TensorRecord, PARAM_FORMAT};

use crate::error::{Error, Result};

/// A dense row-major tensor that may carry a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// A `1 × n` row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::row(vec![value])
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient of {} values for tensor of {}", delta.len(), self.data.len()),
            ));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// `(rows, cols)` view used on the tape.
    fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [] => Ok((1, 1)),
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape("tape", format!("rank {} tensors are not supported", other.len()))),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Softmax(Var, Axis),
    Mean(Var),
    Sum(Var),
    MeanAxis(Var, Axis),
    Concat(Vec<Var>, Axis),
    Slice { input: Var, axis: Axis, start: usize },
    Transpose(Var),
    SqDistance(Var, Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed operations. Inputs always precede their users.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to tape nodes.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn check_same(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
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

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a tensor as a leaf. Gradients flow to it iff it `requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Result<Var> {
        let (r, c) = tensor.dims2()?;
        Ok(self.push(r, c, tensor.data.clone(), Op::Leaf, tensor.requires_grad))
    }

    /// Records a constant (never differentiated) `rows × cols` value.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(Error::shape("constant", format!("{rows}x{cols} vs {} values", value.len())));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    pub fn constant_row(&mut self, value: &[f64]) -> Var {
        self.push(1, value.len(), value.to_vec(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(Error::shape("scalar", format!("{}x{} is not a scalar", n.rows, n.cols)));
        }
        Ok(n.value[0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let g = self.grad_of(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), g))
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.dims(a);
        check_same(op_name, (r, c), self.dims(b))?;
        let out = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(r, c, out, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × n` bias to every row of an `m × n` value.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        check_same("add_bias", (1, n), self.dims(bias))?;
        let bv = &self.node(bias).value;
        let out = self
            .node(a)
            .value
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(x, b)| x + b))
            .collect();
        let g = self.grad_of(&[a, bias]);
        Ok(self.push(m, n, out, Op::AddBias(a, bias), g))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.node(a).value.iter().map(|x| f(*x)).collect();
        let g = self.grad_of(&[a]);
        self.push(r, c, out, op, g)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        self.map(a, |x| x + offset, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r == 0 || c == 0 {
            return Err(Error::shape("softmax", "empty input"));
        }
        let x = &self.node(a).value;
        let mut out = vec![0.0; r * c];
        let (lanes, len, stride, lane_step) = match axis {
            Axis::Cols => (r, c, 1, c),
            Axis::Rows => (c, r, c, 1),
        };
        for lane in 0..lanes {
            let base = lane * lane_step;
            let idx = |j: usize| base + j * stride;
            let max = (0..len).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
        let g = self.grad_of(&[a]);
        Ok(self.push(r, c, out, Op::Softmax(a, axis), g))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.node(a).value;
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let g = self.grad_of(&[a]);
        self.push(1, 1, vec![m], Op::Mean(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().sum::<f64>();
        let g = self.grad_of(&[a]);
        self.push(1, 1, vec![s], Op::Sum(a), g)
    }

    /// Mean along `axis`: `Rows` collapses to `1 × c`, `Cols` to `r × 1`.
    pub fn mean_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r == 0 || c == 0 {
            return Err(Error::shape("mean_axis", "empty input"));
        }
        let x = &self.node(a).value;
        let (out, rows, cols) = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for row in x.chunks(c) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|o| *o /= r as f64);
                (out, 1, c)
            }
            Axis::Cols => (
                x.chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect(),
                r,
                1,
            ),
        };
        let g = self.grad_of(&[a]);
        Ok(self.push(rows, cols, out, Op::MeanAxis(a, axis), g))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let (r0, c0) = self.dims(first);
        let (rows, cols, out) = match axis {
            Axis::Cols => {
                let mut cols = 0;
                for v in inputs {
                    let (r, c) = self.dims(*v);
                    if r != r0 {
                        return Err(Error::shape("concat", format!("row count {r} vs {r0}")));
                    }
                    cols += c;
                }
                let mut out = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for v in inputs {
                        let n = self.node(*v);
                        out.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
                    }
                }
                (r0, cols, out)
            }
            Axis::Rows => {
                let mut rows = 0;
                let mut out = Vec::new();
                for v in inputs {
                    let (r, c) = self.dims(*v);
                    if c != c0 {
                        return Err(Error::shape("concat", format!("column count {c} vs {c0}")));
                    }
                    rows += r;
                    out.extend_from_slice(&self.node(*v).value);
                }
                (rows, c0, out)
            }
        };
        let g = self.grad_of(inputs);
        Ok(self.push(rows, cols, out, Op::Concat(inputs.to_vec(), axis), g))
    }

    /// `len` consecutive rows or columns starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        let extent = if axis == Axis::Rows { r } else { c };
        if start + len > extent || len == 0 {
            return Err(Error::shape("slice", format!("{start}..{} of {extent}", start + len)));
        }
        let x = &self.node(a).value;
        let (rows, cols, out) = match axis {
            Axis::Rows => (len, c, x[start * c..(start + len) * c].to_vec()),
            Axis::Cols => (
                r,
                len,
                x.chunks(c).flat_map(|row| row[start..start + len].iter().copied()).collect(),
            ),
        };
        let g = self.grad_of(&[a]);
        Ok(self.push(rows, cols, out, Op::Slice { input: a, axis, start }, g))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let x = &self.node(a).value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let g = self.grad_of(&[a]);
        self.push(c, r, out, Op::Transpose(a), g)
    }

    /// Squared Euclidean distance `Σ (a - b)²` as a scalar.
    pub fn sq_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sq_distance", self.dims(a), self.dims(b))?;
        let d = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(1, 1, vec![d], Op::SqDistance(a, b), g))
    }

    /// Per-row normalization followed by an elementwise `gain` and `bias` (both `1 × n`).
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(a);
        check_same("layer_norm", (1, c), self.dims(gain))?;
        check_same("layer_norm", (1, c), self.dims(bias))?;
        let x = &self.node(a).value;
        let gv = &self.node(gain).value;
        let bv = &self.node(bias).value;
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                normalized[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        let g = self.grad_of(&[a, gain, bias]);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                normalized,
                inv_std,
            },
            g,
        ))
    }

    /// Mean over rows of `-log softmax(logits_row)[target_row]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(Error::shape("cross_entropy", format!("{} targets for {r} rows", targets.len())));
        }
        if let Some(t) = targets.iter().find(|t| **t >= c) {
            return Err(Error::contract(format!("target class {t} out of range for {c} classes")));
        }
        let x = &self.node(logits).value;
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - log_z).exp();
            }
            loss += log_z - row[t];
        }
        loss /= r as f64;
        let g = self.grad_of(&[logits]);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            g,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Seeds `d loss / d loss = 1`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::contract("loss is not on this tape"))?;
        if node.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {}x{}",
                node.rows, node.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &upstream, &mut grads);
            }
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            delta(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let urow = &up[i * n..(i + 1) * n];
                            ga[i * k + p] += urow.iter().zip(brow).map(|(u, y)| u * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let urow = &up[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            for (g, u) in gb[p * n..(p + 1) * n].iter_mut().zip(urow) {
                                *g += x * u;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, up));
                acc(*b, &mut |g| add_into(g, up));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, up));
                acc(*b, &mut |g| g.iter_mut().zip(up).for_each(|(g, u)| *g -= u));
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                acc(*a, &mut |g| {
                    for ((g, u), y) in g.iter_mut().zip(up).zip(bv) {
                        *g += u * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, u), x) in g.iter_mut().zip(up).zip(av) {
                        *g += u * x;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                let n = node.cols;
                acc(*a, &mut |g| add_into(g, up));
                acc(*bias, &mut |g| {
                    for row in up.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |g| g.iter_mut().zip(up).for_each(|(g, u)| *g += u * f)),
            Op::AddScalar(a) => acc(*a, &mut |g| add_into(g, up)),
            Op::Exp(a) => acc(*a, &mut |g| {
                for ((g, u), y) in g.iter_mut().zip(up).zip(&node.value) {
                    *g += u * y;
                }
            }),
            Op::Log(a) => {
                let x = &self.nodes[a.0].value;
                acc(*a, &mut |g| {
                    for ((g, u), x) in g.iter_mut().zip(up).zip(x) {
                        *g += u / x;
                    }
                });
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                acc(*a, &mut |g| {
                    for ((g, u), x) in g.iter_mut().zip(up).zip(x) {
                        if *x > 0.0 {
                            *g += u;
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (r, c) = (node.rows, node.cols);
                let y = &node.value;
                let (lanes, len, stride, lane_step) = match axis {
                    Axis::Cols => (r, c, 1, c),
                    Axis::Rows => (c, r, c, 1),
                };
                acc(*a, &mut |g| {
                    for lane in 0..lanes {
                        let base = lane * lane_step;
                        let dot: f64 = (0..len).map(|j| up[base + j * stride] * y[base + j * stride]).sum();
                        for j in 0..len {
                            let i = base + j * stride;
                            g[i] += y[i] * (up[i] - dot);
                        }
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += up[0] / n));
            }
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += up[0])),
            Op::MeanAxis(a, axis) => {
                let (r, c) = self.dims(*a);
                acc(*a, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += match axis {
                                Axis::Rows => up[j] / r as f64,
                                Axis::Cols => up[i] / c as f64,
                            };
                        }
                    }
                });
            }
            Op::Concat(inputs, axis) => {
                let mut offset = 0;
                for v in inputs {
                    let (r, c) = self.dims(*v);
                    match axis {
                        Axis::Cols => {
                            let total = node.cols;
                            acc(*v, &mut |g| {
                                for i in 0..r {
                                    add_into(
                                        &mut g[i * c..(i + 1) * c],
                                        &up[i * total + offset..i * total + offset + c],
                                    );
                                }
                            });
                            offset += c;
                        }
                        Axis::Rows => {
                            acc(*v, &mut |g| add_into(g, &up[offset..offset + r * c]));
                            offset += r * c;
                        }
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let (_, c) = self.dims(*input);
                let (rows, cols) = (node.rows, node.cols);
                acc(*input, &mut |g| match axis {
                    Axis::Rows => add_into(&mut g[start * c..(start + rows) * c], up),
                    Axis::Cols => {
                        for i in 0..rows {
                            add_into(&mut g[i * c + start..i * c + start + cols], &up[i * cols..(i + 1) * cols]);
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                acc(*a, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += up[j * r + i];
                        }
                    }
                });
            }
            Op::SqDistance(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                acc(*a, &mut |g| {
                    for ((g, x), y) in g.iter_mut().zip(av).zip(bv) {
                        *g += 2.0 * (x - y) * up[0];
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, x), y) in g.iter_mut().zip(av).zip(bv) {
                        *g -= 2.0 * (x - y) * up[0];
                    }
                });
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (r, c) = (node.rows, node.cols);
                let gv = &self.nodes[gain.0].value;
                acc(*gain, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[j] += up[i * c + j] * normalized[i * c + j];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for row in up.chunks(c) {
                        add_into(g, row);
                    }
                });
                acc(*input, &mut |g| {
                    let n = c as f64;
                    for i in 0..r {
                        let dh: Vec<f64> = (0..c).map(|j| up[i * c + j] * gv[j]).collect();
                        let h = &normalized[i * c..(i + 1) * c];
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(d, h)| d * h).sum();
                        for j in 0..c {
                            g[i * c + j] += inv_std[i] / n * (n * dh[j] - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = self.dims(*logits).1;
                let r = targets.len() as f64;
                acc(*logits, &mut |g| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            g[i * c + j] += up[0] * (probs[i * c + j] - onehot) / r;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

//! Tape-style computation graph. Nodes are appended in evaluation order, so
//! a reverse sweep over the node list is a valid topological order for
//! backpropagation.

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Index of a trainable parameter in the parameter slice a graph borrows.
pub type ParamId = usize;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations selectable by tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Add,
    Mul,
    Sub,
}

impl Elementwise {
    fn arity(self) -> usize {
        match self {
            Elementwise::Add | Elementwise::Mul | Elementwise::Sub => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Softmax { x: Var, axis: usize },
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    Nll {
        logp: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    GradReverse(Var, f64),
    Gather { table: Var, indices: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    // Empty for parameter nodes, whose value lives in the borrowed slice.
    value: Tensor,
    op: Op,
}

/// A single forward pass recorded for reverse-mode differentiation.
///
/// Parameter values are borrowed, never copied; every other node owns its
/// forward value. Any op producing a NaN or infinity fails immediately.
#[derive(Debug)]
pub struct Graph<'p> {
    params: &'p [Tensor],
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Graph {
            params,
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    /// A graph with no trainable parameters.
    pub fn detached() -> Graph<'static> {
        Graph::new(&[])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params[id],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives a gradient but feeds no parameter.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "input")
    }

    /// Parameter leaf. Repeated calls with one id share a node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if id >= self.params.len() {
            return Err(Error::Contract(format!(
                "parameter {id} not present (graph holds {})",
                self.params.len()
            )));
        }
        if let Some(v) = self.param_nodes[id] {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: Tensor::scalar(0.0),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id] = Some(v);
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::dim("transpose", self.shape(x), &[0, 0]));
        }
        let t = self.value(x).transpose();
        self.push(t, Op::Transpose(x), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(t, Op::Mul(a, b), "mul")
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        if self.value(row).len() != cols {
            return Err(Error::dim("add_row", self.shape(x), self.shape(row)));
        }
        let mut t = self.value(x).clone();
        let b = self.value(row).data();
        for r in 0..rows {
            for (v, bv) in t.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.push(t, Op::AddRow(x, row), "add_row")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * factor);
        self.push(t, Op::Scale(x, factor), "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v + c);
        self.push(t, Op::AddScalar(x), "add_scalar")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::tanh);
        self.push(t, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x), "relu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::exp);
        self.push(t, Op::Exp(x), "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let t = self.value(x).map(f64::ln);
        self.push(t, Op::Log(x), "log")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::abs);
        self.push(t, Op::Abs(x), "abs")
    }

    pub fn elementwise(&mut self, op: Elementwise, operands: &[Var]) -> Result<Var> {
        if operands.len() != op.arity() {
            return Err(Error::Contract(format!(
                "{op:?} takes {} operand(s), got {}",
                op.arity(),
                operands.len()
            )));
        }
        let x = operands[0];
        match op {
            Elementwise::Sigmoid => self.sigmoid(x),
            Elementwise::Tanh => self.tanh(x),
            Elementwise::Relu => self.relu(x),
            Elementwise::Exp => self.exp(x),
            Elementwise::Log => self.log(x),
            Elementwise::Add => self.add(x, operands[1]),
            Elementwise::Mul => self.mul(x, operands[1]),
            Elementwise::Sub => self.sub(x, operands[1]),
        }
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                t.shape()
            )));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        self.push(t, Op::Softmax { x, axis }, "softmax")
    }

    /// Row softmax where columns with `keep[j] == false` get exactly zero
    /// weight. At least one column must be kept.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        if keep.len() != cols {
            return Err(Error::dim("masked_softmax", self.shape(x), &[keep.len()]));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::Contract("masked_softmax with every column masked".into()));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for j in 0..cols {
                if keep[j] {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(t, Op::MaskedSoftmax(x), "masked_softmax")
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        let mut out = self.value(x).data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(t, Op::LogSoftmax(x), "log_softmax")
    }

    /// `Σ_r −weights[r] · logp[r, targets[r]]` over the rows of `logp`.
    pub fn nll(&mut self, logp: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (rows, cols) = self.value(logp).rows_cols();
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::dim("nll", self.shape(logp), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Vocabulary {
                index: bad,
                size: cols,
            });
        }
        let lp = self.value(logp).data();
        let total: f64 = targets
            .iter()
            .zip(weights)
            .enumerate()
            .filter(|(_, (_, &w))| w != 0.0)
            .map(|(r, (&t, &w))| -w * lp[r * cols + t])
            .sum();
        self.push(
            Tensor::scalar(total),
            Op::Nll {
                logp,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            "nll",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), "mean")
    }

    /// Identity forward; backward multiplies the incoming gradient by `-scale`.
    pub fn grad_reverse(&mut self, x: Var, scale: f64) -> Result<Var> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!(
                "gradient reversal scale must be finite and non-negative, got {scale}"
            )));
        }
        let t = self.value(x).clone();
        self.push(t, Op::GradReverse(x, scale), "grad_reverse")
    }

    /// Row gather from a `[V×d]` table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::dim("gather", t.shape(), &[0, 0]));
        }
        if indices.is_empty() {
            return Err(Error::Contract("gather with no indices".into()));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::Vocabulary { index: i, size: v });
            }
            out.extend_from_slice(t.row(i));
        }
        let t = Tensor::new(vec![indices.len(), d], out)?;
        self.push(
            t,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            "gather",
        )
    }

    /// Concatenates along the last axis. Vectors concatenate to a vector.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rank = self.value(first).rank();
        let rows = self.value(first).rows_cols().0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != rank || t.rows_cols().0 != rows {
                return Err(Error::dim("concat_cols", self.shape(first), t.shape()));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).rows_cols().1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Stacks row blocks; vectors count as single rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let cols = self.value(first).rows_cols().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.rows_cols();
            if c != cols {
                return Err(Error::dim("concat_rows", self.shape(first), t.shape()));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        self.push(t, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.rows_cols();
        if start >= end || end > cols {
            return Err(Error::dim("slice_cols", t.shape(), &[start, end]));
        }
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&t.row(r)[start..end]);
        }
        let shape = if t.rank() == 1 {
            vec![end - start]
        } else {
            vec![rows, end - start]
        };
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::SliceCols { x, start }, "slice_cols")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.rows_cols();
        if t.rank() != 2 || start >= end || end > rows {
            return Err(Error::dim("slice_rows", t.shape(), &[start, end]));
        }
        let out = t.data()[start * cols..end * cols].to_vec();
        let t = Tensor::new(vec![end - start, cols], out)?;
        self.push(t, Op::SliceRows { x, start }, "slice_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let (mean, inv_std) = row_moments(row, eps);
            for j in 0..cols {
                out[r * cols + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(t, Op::LayerNorm { x, gain, bias, eps }, "layer_norm")
    }

    /// Reverse sweep from a scalar `loss`. The graph itself is untouched, so
    /// repeated calls return identical maps.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut params = vec![None; self.params.len()];
        for (id, node) in self.param_nodes.iter().enumerate() {
            if let Some(v) = node {
                params[id] = grads[v.0].clone();
            }
        }
        let shapes = (0..self.nodes.len())
            .map(|i| self.value(Var(i)).shape().to_vec())
            .collect();
        Ok(Gradients {
            nodes: grads,
            shapes,
            params,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let ga = matmul_nt(g.data(), tb.data(), m, n, k);
                let gb = matmul_tn(ta.data(), g.data(), m, k, n);
                accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(self.value(*b), |gv, bv| gv * bv));
                accumulate(grads, *b, g.zip_map(self.value(*a), |gv, av| gv * av));
            }
            Op::AddRow(x, row) => {
                let (rows, cols) = g.rows_cols();
                let mut gb = vec![0.0; cols];
                for r in 0..rows {
                    for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *x, g.clone());
                let shape = self.shape(*row).to_vec();
                accumulate(grads, *row, Tensor::new(shape, gb)?);
            }
            Op::Scale(x, c) => accumulate(grads, *x, g.map(|v| v * c)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::Sigmoid(x) => accumulate(grads, *x, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Tanh(x) => accumulate(grads, *x, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
            Op::Relu(x) => accumulate(
                grads,
                *x,
                g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            ),
            Op::Exp(x) => accumulate(grads, *x, g.zip_map(y, |gv, e| gv * e)),
            Op::Log(x) => accumulate(grads, *x, g.zip_map(self.value(*x), |gv, xv| gv / xv)),
            Op::Abs(x) => accumulate(
                grads,
                *x,
                g.zip_map(self.value(*x), |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut out = vec![0.0; yd.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + k;
                        let dot: f64 = (0..len).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
                        for j in 0..len {
                            out[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::MaskedSoftmax(x) => {
                let (rows, cols) = y.rows_cols();
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        out[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::LogSoftmax(x) => {
                let (rows, cols) = y.rows_cols();
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let total: f64 = gr.iter().sum();
                    for j in 0..cols {
                        out[r * cols + j] = gr[j] - yr[j].exp() * total;
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::Nll {
                logp,
                targets,
                weights,
            } => {
                let gs = g.item();
                let mut out = Tensor::zeros(self.shape(*logp));
                let cols = out.rows_cols().1;
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    out.data_mut()[r * cols + t] = -w * gs;
                }
                accumulate(grads, *logp, out);
            }
            Op::Sum(x) => accumulate(grads, *x, Tensor::full(self.shape(*x), g.item())),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                accumulate(grads, *x, Tensor::full(self.shape(*x), g.item() / n));
            }
            Op::GradReverse(x, scale) => accumulate(grads, *x, g.map(|v| -scale * v)),
            Op::Gather { table, indices } => {
                let mut out = Tensor::zeros(self.shape(*table));
                let d = out.shape()[1];
                for (r, &idx) in indices.iter().enumerate() {
                    let dst = &mut out.data_mut()[idx * d..(idx + 1) * d];
                    for (a, b) in dst.iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                accumulate(grads, *table, out);
            }
            Op::ConcatCols(parts) => {
                let (rows, _) = g.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).rows_cols().1;
                    let mut piece = Vec::with_capacity(rows * width);
                    for r in 0..rows {
                        piece.extend_from_slice(&g.row(r)[offset..offset + width]);
                    }
                    offset += width;
                    accumulate(grads, p, Tensor::new(self.shape(p).to_vec(), piece)?);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let piece = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    accumulate(grads, p, Tensor::new(self.shape(p).to_vec(), piece)?);
                }
            }
            Op::SliceCols { x, start } => {
                let mut out = Tensor::zeros(self.shape(*x));
                let cols = out.rows_cols().1;
                let (rows, width) = g.rows_cols();
                for r in 0..rows {
                    out.data_mut()[r * cols + start..r * cols + start + width]
                        .copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, out);
            }
            Op::SliceRows { x, start } => {
                let mut out = Tensor::zeros(self.shape(*x));
                let cols = out.rows_cols().1;
                out.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, out);
            }
            Op::Reshape(x) => {
                let t = g.clone().reshaped(self.shape(*x).to_vec())?;
                accumulate(grads, *x, t);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (rows, cols) = g.rows_cols();
                let xs = self.value(*x);
                let gv = self.value(*gain).data();
                let mut gx = vec![0.0; rows * cols];
                let mut ggain = vec![0.0; cols];
                let mut gbias = vec![0.0; cols];
                let n = cols as f64;
                for r in 0..rows {
                    let row = xs.row(r);
                    let gr = g.row(r);
                    let (mean, inv_std) = row_moments(row, *eps);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        gx[r * cols + j] =
                            inv_std / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
                        ggain[j] += gr[j] * xhat[j];
                        gbias[j] += gr[j];
                    }
                }
                accumulate(grads, *x, Tensor::new(xs.shape().to_vec(), gx)?);
                let gs = self.shape(*gain).to_vec();
                accumulate(grads, *gain, Tensor::new(gs, ggain)?);
                let bs = self.shape(*bias).to_vec();
                accumulate(grads, *bias, Tensor::new(bs, gbias)?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Graph::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a node; zeros when the node does not reach
    /// the loss.
    pub fn get(&self, v: Var) -> Tensor {
        self.nodes[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id).and_then(Option::as_ref)
    }

    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

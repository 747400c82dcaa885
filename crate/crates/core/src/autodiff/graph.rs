use std::collections::BTreeMap;
use std::fmt;

use super::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
///
/// `backward` receives the forward input values, the forward output and the
/// incoming gradient, and returns one optional flat gradient per input.
pub trait CustomOp<T: Scalar>: Send {
    fn name(&self) -> &str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
    ) -> Vec<Option<Vec<T>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddColBias(usize, usize),
    ScaleRows(usize, usize),
    Scale(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    LogSoftmax(usize),
    MaxOverRows {
        x: usize,
        argmax: Vec<usize>,
    },
    Transpose(usize),
    Reshape(usize),
    Slice {
        x: usize,
        row0: usize,
        col0: usize,
    },
    SelectCols {
        x: usize,
        cols: Vec<usize>,
    },
    Concat {
        parts: Vec<usize>,
        axis: Axis,
    },
    Sum(usize),
    Mean(usize),
    Pick {
        x: usize,
        index: usize,
    },
    GradReverse {
        x: usize,
        lambda: T,
    },
    Custom {
        inputs: Vec<usize>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Scalar> fmt::Debug for Op<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddColBias(..) => "add_col_bias",
            Op::ScaleRows(..) => "scale_rows",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::MaxOverRows { .. } => "max_over_rows",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Slice { .. } => "slice",
            Op::SelectCols { .. } => "select_cols",
            Op::Concat { .. } => "concat",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Pick { .. } => "pick",
            Op::GradReverse { .. } => "grad_reverse",
            Op::Custom { op, .. } => return write!(f, "custom({})", op.name()),
        };
        f.write_str(name)
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of one backward pass, keyed by leaf.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_leaf: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_leaf.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.by_leaf.iter().map(|(&v, t)| (v, t))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Reverse-mode tape. Operations are appended in execution order, so node
/// inputs always precede the node itself.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    grl_sign_fault: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            grl_sign_fault: false,
        }
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fault-injection hook for the gradient checker: gradient reversal
    /// passes `+lambda·g` instead of `-lambda·g`.
    #[doc(hidden)]
    pub fn inject_grl_sign_fault(&mut self, on: bool) {
        self.grl_sign_fault = on;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let rg = self.rg(&ids);
        self.push(value, Op::Custom { inputs: ids, op }, rg)
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a.0, b.0), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_raw(self.shape(a).to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Sub(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::Mul(a.0, b.0), rg))
    }

    /// Adds vector `b[r]` to every column of `x[r×c]`.
    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.mat_dims(x, "add_col_bias")?;
        if self.value(b).len() != r || self.value(b).ndim() != 1 {
            return Err(Error::dim("add_col_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..r {
            for v in &mut out[i * c..(i + 1) * c] {
                *v += bias[i];
            }
        }
        let rg = self.rg(&[x.0, b.0]);
        Ok(self.push(
            Tensor::from_raw(vec![r, c], out),
            Op::AddColBias(x.0, b.0),
            rg,
        ))
    }

    /// Multiplies row `i` of `x[r×c]` by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = self.mat_dims(x, "scale_rows")?;
        if self.value(s).len() != r || self.value(s).ndim() != 1 {
            return Err(Error::dim("scale_rows", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..r {
            for v in &mut out[i * c..(i + 1) * c] {
                *v *= sv[i];
            }
        }
        let rg = self.rg(&[x.0, s.0]);
        Ok(self.push(
            Tensor::from_raw(vec![r, c], out),
            Op::ScaleRows(x.0, s.0),
            rg,
        ))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Scale(x.0, c), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::tanh);
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Tanh(x.0), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Sigmoid(x.0), rg)
    }

    fn vector_len(&self, x: Var, op: &'static str) -> Result<usize> {
        let s = self.shape(x);
        if s.len() != 1 {
            return Err(Error::dim(op, s, &[0]));
        }
        Ok(s[0])
    }

    /// Softmax of a vector, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vector_len(x, "softmax")?;
        let t = Tensor::from_raw(vec![n], softmax_slice(self.value(x).data()));
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Softmax(x.0), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vector_len(x, "log_softmax")?;
        let xs = self.value(x).data();
        let lse = crate::scalar::log_sum_exp(xs);
        let t = Tensor::from_raw(vec![n], xs.iter().map(|&v| v - lse).collect());
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::LogSoftmax(x.0), rg))
    }

    /// Column-wise maxima of `x[r×c]` (reduces the row axis). Ties go to the lowest row.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.mat_dims(x, "max_over_rows")?;
        let xs = self.value(x).data();
        let mut argmax = vec![0usize; c];
        let mut out = vec![T::zero(); c];
        for j in 0..c {
            let mut best = xs[j];
            for i in 1..r {
                let v = xs[i * c + j];
                if v > best {
                    best = v;
                    argmax[j] = i;
                }
            }
            out[j] = best;
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::from_raw(vec![c], out),
            Op::MaxOverRows { x: x.0, argmax },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.mat_dims(x, "transpose")?;
        let t = self.value(x).transpose();
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Transpose(x.0), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let t = Tensor::from_raw(shape.to_vec(), self.value(x).data().to_vec());
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Reshape(x.0), rg))
    }

    /// Sub-block `rows × cols` of a matrix.
    pub fn slice(
        &mut self,
        x: Var,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Var> {
        let (r, c) = self.mat_dims(x, "slice")?;
        if rows.end > r || cols.end > c || rows.is_empty() || cols.is_empty() {
            return Err(Error::dim("slice", self.shape(x), &[rows.end, cols.end]));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            out.extend_from_slice(&xs[i * c + cols.start..i * c + cols.end]);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::from_raw(vec![rows.len(), cols.len()], out),
            Op::Slice {
                x: x.0,
                row0: rows.start,
                col0: cols.start,
            },
            rg,
        ))
    }

    /// Gathers columns of a matrix; indices may repeat.
    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.mat_dims(x, "select_cols")?;
        if cols.is_empty() || cols.iter().any(|&j| j >= c) {
            return Err(Error::dim("select_cols", self.shape(x), &[cols.len()]));
        }
        let xs = self.value(x).data();
        let n = cols.len();
        let mut out = vec![T::zero(); r * n];
        for i in 0..r {
            for (k, &j) in cols.iter().enumerate() {
                out[i * n + k] = xs[i * c + j];
            }
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::from_raw(vec![r, n], out),
            Op::SelectCols {
                x: x.0,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates matrices along `axis`, or vectors end to end (`Axis::Rows`).
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let t = if self.shape(first).len() == 1 {
            if axis != Axis::Rows || parts.iter().any(|&p| self.shape(p).len() != 1) {
                return Err(Error::dim("concat", self.shape(first), &[]));
            }
            let data: Vec<T> = parts
                .iter()
                .flat_map(|&p| self.value(p).data().iter().copied())
                .collect();
            Tensor::from_raw(vec![data.len()], data)
        } else {
            let (r0, c0) = self.mat_dims(first, "concat")?;
            for &p in parts {
                let (r, c) = self.mat_dims(p, "concat")?;
                let ok = match axis {
                    Axis::Rows => c == c0,
                    Axis::Cols => r == r0,
                };
                if !ok {
                    return Err(Error::dim("concat", self.shape(first), self.shape(p)));
                }
            }
            match axis {
                Axis::Rows => {
                    let data: Vec<T> = parts
                        .iter()
                        .flat_map(|&p| self.value(p).data().iter().copied())
                        .collect();
                    let rows = data.len() / c0;
                    Tensor::from_raw(vec![rows, c0], data)
                }
                Axis::Cols => {
                    let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
                    let mut data = Vec::with_capacity(r0 * total);
                    for i in 0..r0 {
                        for &p in parts {
                            let c = self.shape(p)[1];
                            data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                        }
                    }
                    Tensor::from_raw(vec![r0, total], data)
                }
            }
        };
        let rg = self.rg(&ids);
        Ok(self.push(t, Op::Concat { parts: ids, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xs = self.value(x).data();
        let s: T = xs.iter().copied().sum::<T>() / T::from_f64(xs.len() as f64);
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::Mean(x.0), rg)
    }

    /// Scalar element at a flat index.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.value(x);
        if index >= xs.len() {
            return Err(Error::dim("pick", xs.shape(), &[index]));
        }
        let v = xs.data()[index];
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::scalar(v), Op::Pick { x: x.0, index }, rg))
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda` on the way back.
    pub fn grad_reverse(&mut self, x: Var, lambda: T) -> Result<Var> {
        if !(lambda >= T::zero()) {
            return Err(Error::Contract(format!(
                "gradient reversal scale must be >= 0, got {lambda}"
            )));
        }
        let t = self.value(x).clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::GradReverse { x: x.0, lambda }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf on the tape gets an
    /// entry (zeros if the loss does not depend on it). A tape supports one sweep;
    /// call [`Graph::reset`] before recording again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Contract(
                "backward called twice on one tape without reset".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let mut by_leaf = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let data = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                by_leaf.insert(Var(i), Tensor::from_raw(node.value.shape().to_vec(), data));
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let y = node.value.data();
        let mut acc = |idx: usize, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[idx].requires_grad {
                return;
            }
            let slot = grads[idx].get_or_insert_with(|| vec![T::zero(); nodes[idx].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a].value.rows(), nodes[a].value.cols());
                let n = nodes[b].value.cols();
                let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
                acc(a, &mut |da| gemm_a_bt_acc(g, bv, da, m, k, n));
                acc(b, &mut |db| gemm_at_b_acc(av, g, db, m, k, n));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(o, &v)| *o -= v));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
                acc(a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                acc(b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            &Op::AddColBias(x, b) => {
                let c = nodes[x].value.cols();
                acc(x, &mut |d| add_into(d, g));
                acc(b, &mut |d| {
                    for (r, o) in d.iter_mut().enumerate() {
                        *o += g[r * c..(r + 1) * c].iter().copied().sum::<T>();
                    }
                });
            }
            &Op::ScaleRows(x, s) => {
                let c = nodes[x].value.cols();
                let (xv, sv) = (nodes[x].value.data(), nodes[s].value.data());
                acc(x, &mut |d| {
                    for (r, &sr) in sv.iter().enumerate() {
                        for k in r * c..(r + 1) * c {
                            d[k] += g[k] * sr;
                        }
                    }
                });
                acc(s, &mut |d| {
                    for (r, o) in d.iter_mut().enumerate() {
                        let mut t = T::zero();
                        for k in r * c..(r + 1) * c {
                            t += g[k] * xv[k];
                        }
                        *o += t;
                    }
                });
            }
            &Op::Scale(x, c) => acc(x, &mut |d| {
                d.iter_mut().zip(g).for_each(|(o, &v)| *o += v * c)
            }),
            &Op::Tanh(x) => acc(x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * (T::one() - y[k] * y[k]);
                }
            }),
            &Op::Sigmoid(x) => acc(x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * y[k] * (T::one() - y[k]);
                }
            }),
            &Op::Softmax(x) => {
                let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
                acc(x, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += y[k] * (g[k] - dot);
                    }
                });
            }
            &Op::LogSoftmax(x) => {
                let gs: T = g.iter().copied().sum();
                acc(x, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] - y[k].exp() * gs;
                    }
                });
            }
            Op::MaxOverRows { x, argmax } => {
                let c = argmax.len();
                acc(*x, &mut |d| {
                    for (j, &i) in argmax.iter().enumerate() {
                        d[i * c + j] += g[j];
                    }
                });
            }
            &Op::Transpose(x) => {
                let (r, c) = (nodes[x].value.rows(), nodes[x].value.cols());
                acc(x, &mut |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            &Op::Reshape(x) => acc(x, &mut |d| add_into(d, g)),
            &Op::Slice { x, row0, col0 } => {
                let c = nodes[x].value.cols();
                let (sr, sc) = (node.value.rows(), node.value.cols());
                acc(x, &mut |d| {
                    for i in 0..sr {
                        for j in 0..sc {
                            d[(row0 + i) * c + col0 + j] += g[i * sc + j];
                        }
                    }
                });
            }
            Op::SelectCols { x, cols } => {
                let c = nodes[*x].value.cols();
                let n = cols.len();
                let r = node.value.rows();
                acc(*x, &mut |d| {
                    for i in 0..r {
                        for (k, &j) in cols.iter().enumerate() {
                            d[i * c + j] += g[i * n + k];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let vector = node.value.ndim() == 1;
                match (vector, axis) {
                    (true, _) | (false, Axis::Rows) => {
                        let mut off = 0;
                        for &p in parts {
                            let len = nodes[p].value.len();
                            acc(p, &mut |d| add_into(d, &g[off..off + len]));
                            off += len;
                        }
                    }
                    (false, Axis::Cols) => {
                        let total = node.value.cols();
                        let rows = node.value.rows();
                        let mut off = 0;
                        for &p in parts {
                            let c = nodes[p].value.cols();
                            acc(p, &mut |d| {
                                for i in 0..rows {
                                    add_into(
                                        &mut d[i * c..(i + 1) * c],
                                        &g[i * total + off..i * total + off + c],
                                    );
                                }
                            });
                            off += c;
                        }
                    }
                }
            }
            &Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|o| *o += g[0])),
            &Op::Mean(x) => {
                let n = T::from_f64(nodes[x].value.len() as f64);
                acc(x, &mut |d| d.iter_mut().for_each(|o| *o += g[0] / n));
            }
            &Op::Pick { x, index } => acc(x, &mut |d| d[index] += g[0]),
            &Op::GradReverse { x, lambda } => {
                let s = if self.grl_sign_fault { lambda } else { -lambda };
                acc(x, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(o, &v)| *o += s * v)
                });
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&k| &nodes[k].value).collect();
                let back = op.backward(&vals, &node.value, g);
                for (&k, gk) in inputs.iter().zip(back) {
                    if let Some(gk) = gk {
                        acc(k, &mut |d| add_into(d, &gk));
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(d: &mut [T], g: &[T]) {
    for (o, &v) in d.iter_mut().zip(g) {
        *o += v;
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_slice<T: Scalar>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&v| (v - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every loss evaluation. Leaves are added
//! with [`Graph::param`] (differentiable) or [`Graph::constant`]; every other
//! method records one operation and returns a [`Var`] handle. Operations
//! whose inputs are all constant are evaluated eagerly and leave no record,
//! so inference graphs carry no backward bookkeeping.
//!
//! Node ids are assigned in creation order, which is already a topological
//! order; [`Graph::backward`] walks the nodes once in reverse.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Concat,
    Sigmoid,
    Tanh,
    SoftmaxRows,
    LogSoftmaxRows,
    LogSumExpRows,
    MaxOverRows,
    MaskFill,
    Slice,
    Sum,
    Mean,
    Scale,
    GatherRows,
    Pick,
    LogSigmoid,
    Custom,
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use OpKind::*;
        let kind = match s.to_ascii_lowercase().as_str() {
            "matmul" => MatMul,
            "add" => Add,
            "mul" => Mul,
            "concat" => Concat,
            "sigmoid" => Sigmoid,
            "tanh" => Tanh,
            "softmax_rows" => SoftmaxRows,
            "log_softmax_rows" => LogSoftmaxRows,
            "logsumexp_rows" => LogSumExpRows,
            "max_over_rows" => MaxOverRows,
            "mask_fill" => MaskFill,
            "slice" => Slice,
            "sum" => Sum,
            "mean" => Mean,
            "scale" => Scale,
            "gather_rows" => GatherRows,
            "pick" => Pick,
            "log_sigmoid" => LogSigmoid,
            "custom" => Custom,
            other => return Err(Error::Config(format!("unknown op kind `{other}`"))),
        };
        Ok(kind)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Mul(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    MaxOverRows { x: Var, argmax: Vec<usize> },
    MaskFill { x: Var, mask: Vec<bool> },
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    GatherRows { table: Var, ids: Vec<usize> },
    Pick { x: Var, cols: Vec<usize> },
    LogSigmoid { x: Var, lo: f64, hi: f64 },
    Custom { inputs: Vec<Var>, grads: Vec<Tensor> },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Concat { .. } => OpKind::Concat,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::LogSoftmaxRows(_) => OpKind::LogSoftmaxRows,
            Op::LogSumExpRows(_) => OpKind::LogSumExpRows,
            Op::MaxOverRows { .. } => OpKind::MaxOverRows,
            Op::MaskFill { .. } => OpKind::MaskFill,
            Op::Slice { .. } => OpKind::Slice,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Scale(..) => OpKind::Scale,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Pick { .. } => OpKind::Pick,
            Op::LogSigmoid { .. } => OpKind::LogSigmoid,
            Op::Custom { .. } => OpKind::Custom,
        })
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    fault: Option<OpKind>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` via the softplus identity.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scales every backward contribution of `kind` by 1.5.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded (differentiable) operations.
    pub fn record_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] loss w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, out: Tensor, op: Op) -> Var {
        let rg = self.any_grad(&[x]);
        self.push(out, rg, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2("matmul")?;
        let (k2, m) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * m..(p + 1) * m];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, rg, Op::MatMul(a, b)))
    }

    /// Elementwise sum. `b` may also be a `1 x m` row broadcast over the
    /// rows of an `n x m` `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let broadcast = if sa == sb {
            false
        } else if sa.len() == 2 && sb == [1, sa[1]] {
            true
        } else {
            return Err(Error::Shape {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        };
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut out = av.clone();
        if broadcast {
            let m = bv.len();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o += bv[i % m];
            }
        } else {
            for (o, v) in out.data_mut().iter_mut().zip(bv) {
                *o += v;
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b, broadcast }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op: "mul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(Error::Shape {
                op: "concat",
                lhs: vec![inputs.len()],
                rhs: vec![axis],
            });
        }
        let (r0, c0) = self.value(inputs[0]).dims2("concat")?;
        let mut rows = 0;
        let mut cols = 0;
        for &v in inputs {
            let (r, c) = self.value(v).dims2("concat")?;
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.value(inputs[0]).shape().to_vec(),
                    rhs: self.value(v).shape().to_vec(),
                });
            }
            rows += r;
            cols += c;
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(rows * c0);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::new(vec![rows, c0], data)?
        } else {
            let mut data = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(r));
                }
            }
            Tensor::new(vec![r0, cols], data)?
        };
        let rg = self.any_grad(inputs);
        Ok(self.push(
            out,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.unary(x, out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.unary(x, out, Op::Tanh(x))
    }

    fn row_reduce_dims(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        let (r, c) = self.value(x).dims2(op)?;
        if c == 0 {
            return Err(Error::EmptyAxis {
                op,
                shape: vec![r, c],
            });
        }
        Ok((r, c))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.row_reduce_dims(x, "softmax_rows")?;
        let src = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = src.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - max).exp();
                z += *o;
            }
            out[i * c..(i + 1) * c].iter_mut().for_each(|o| *o /= z);
        }
        let out = Tensor::new(vec![r, c], out)?;
        Ok(self.unary(x, out, Op::SoftmaxRows(x)))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.row_reduce_dims(x, "log_softmax_rows")?;
        let src = self.value(x);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = src.row(i);
            let lse = logsumexp(row);
            out.extend(row.iter().map(|v| v - lse));
        }
        let out = Tensor::new(vec![r, c], out)?;
        Ok(self.unary(x, out, Op::LogSoftmaxRows(x)))
    }

    /// Row-wise log-sum-exp, `n x m -> n x 1`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let (r, _) = self.row_reduce_dims(x, "logsumexp_rows")?;
        let src = self.value(x);
        let out: Vec<f64> = (0..r).map(|i| logsumexp(src.row(i))).collect();
        let out = Tensor::new(vec![r, 1], out)?;
        Ok(self.unary(x, out, Op::LogSumExpRows(x)))
    }

    /// Column-wise maximum over rows, `n x m -> 1 x m`. Backward routes to
    /// the lowest row index among tied maxima.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("max_over_rows")?;
        if r == 0 {
            return Err(Error::EmptyAxis {
                op: "max_over_rows",
                shape: vec![r, c],
            });
        }
        let src = self.value(x);
        let mut argmax = vec![0; c];
        let mut out = src.row(0).to_vec();
        for i in 1..r {
            for (j, v) in src.row(i).iter().enumerate() {
                if *v > out[j] {
                    out[j] = *v;
                    argmax[j] = i;
                }
            }
        }
        let out = Tensor::row_vector(out);
        Ok(self.unary(x, out, Op::MaxOverRows { x, argmax }))
    }

    /// Replaces entries where `mask` is true with `fill`.
    pub fn mask_fill(&mut self, x: Var, mask: &[bool], fill: f64) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Shape {
                op: "mask_fill",
                lhs: self.value(x).shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(mask) {
            if m {
                *o = fill;
            }
        }
        Ok(self.unary(
            x,
            out,
            Op::MaskFill {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Half-open range `[start, end)` along `axis` of a rank-2 tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("slice")?;
        let bound = if axis == 0 { r } else { c };
        if axis > 1 || start > end || end > bound {
            return Err(Error::Shape {
                op: "slice",
                lhs: vec![r, c],
                rhs: vec![axis, start, end],
            });
        }
        let src = self.value(x);
        let out = if axis == 0 {
            Tensor::new(vec![end - start, c], src.data()[start * c..end * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&src.row(i)[start..end]);
            }
            Tensor::new(vec![r, end - start], data)?
        };
        Ok(self.unary(x, out, Op::Slice { x, axis, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.unary(x, Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::EmptyAxis {
                op: "mean",
                shape: self.value(x).shape().to_vec(),
            });
        }
        let s: f64 = self.value(x).data().iter().sum();
        Ok(self.unary(x, Tensor::scalar(s / n as f64), Op::Mean(x)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.unary(x, out, Op::Scale(x, factor))
    }

    /// Row lookup: `table[ids[i], :]` for every `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.value(table).dims2("gather_rows")?;
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows",
                    index: id,
                    bound: r,
                });
            }
            data.extend_from_slice(src.row(id));
        }
        let out = Tensor::new(vec![ids.len(), c], data)?;
        Ok(self.unary(
            table,
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Picks `x[i, cols[i]]` from every row, `n x m -> n x 1`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.value(x).dims2("pick")?;
        if cols.len() != r {
            return Err(Error::Shape {
                op: "pick",
                lhs: vec![r, c],
                rhs: vec![cols.len()],
            });
        }
        let mut out = Vec::with_capacity(r);
        for (i, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(Error::IndexOutOfRange {
                    what: "pick",
                    index: j,
                    bound: c,
                });
            }
            out.push(self.value(x).at(i, j));
        }
        let out = Tensor::new(vec![r, 1], out)?;
        Ok(self.unary(
            x,
            out,
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
        ))
    }

    /// `log(sigmoid(clamp(x, lo, hi)))`. Clamping the logit is the same as
    /// clamping the probability to `[sigmoid(lo), sigmoid(hi)]`; the
    /// gradient is zero outside the clamp range.
    pub fn log_sigmoid(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = log_sigmoid(v.clamp(lo, hi)));
        self.unary(x, out, Op::LogSigmoid { x, lo, hi })
    }

    /// Scalar node whose local gradients w.r.t. `inputs` were computed by
    /// the caller (used for fused dynamic programs such as the CRF).
    pub fn scalar_custom(&mut self, value: f64, inputs: &[Var], grads: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(Error::LengthMismatch(format!(
                "custom op: {} inputs, {} gradients",
                inputs.len(),
                grads.len()
            )));
        }
        for (v, g) in inputs.iter().zip(&grads) {
            if self.value(*v).shape() != g.shape() {
                return Err(Error::Shape {
                    op: "custom",
                    lhs: self.value(*v).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::scalar(value),
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                grads,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate additively
    /// over every use of a node and replace those of any earlier pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let loss_shape = lv.shape().to_vec();
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(&loss_shape, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(upstream) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream);
            self.grads[idx] = Some(upstream);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, dy: &Tensor) {
        let Self {
            nodes,
            grads,
            fault,
        } = self;
        let node = &nodes[idx];
        let factor = match (node.op.kind(), *fault) {
            (Some(k), Some(f)) if k == f => 1.5,
            _ => 1.0,
        };
        let dy = dy.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let g = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
            if factor == 1.0 {
                f(g.data_mut());
            } else {
                let mut tmp = vec![0.0; g.len()];
                f(&mut tmp);
                for (a, b) in g.data_mut().iter_mut().zip(tmp) {
                    *a += factor * b;
                }
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (n, k) = (val(a).rows(), val(a).cols());
                let m = val(b).cols();
                let (ad, bd) = (val(a).data(), val(b).data());
                acc(a, &mut |g| {
                    for i in 0..n {
                        let dyr = &dy[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bd[p * m..(p + 1) * m];
                            g[i * k + p] += dyr.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(b, &mut |g| {
                    for i in 0..n {
                        let dyr = &dy[i * m..(i + 1) * m];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, d) in g[p * m..(p + 1) * m].iter_mut().zip(dyr) {
                                *o += av * d;
                            }
                        }
                    }
                });
            }
            &Op::Add { a, b, broadcast } => {
                acc(a, &mut |g| g.iter_mut().zip(dy).for_each(|(o, d)| *o += d));
                acc(b, &mut |g| {
                    if broadcast {
                        let m = g.len();
                        for (i, d) in dy.iter().enumerate() {
                            g[i % m] += d;
                        }
                    } else {
                        g.iter_mut().zip(dy).for_each(|(o, d)| *o += d);
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                acc(a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * bd[i];
                    }
                });
                acc(b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * ad[i];
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let total_cols = y.cols();
                let mut offset = 0;
                for &v in inputs {
                    let (r, c) = (val(v).rows(), val(v).cols());
                    if *axis == 0 {
                        let src = &dy[offset * total_cols..(offset + r) * total_cols];
                        acc(v, &mut |g| g.iter_mut().zip(src).for_each(|(o, d)| *o += d));
                        offset += r;
                    } else {
                        acc(v, &mut |g| {
                            for i in 0..r {
                                let src = &dy[i * total_cols + offset..i * total_cols + offset + c];
                                for (o, d) in g[i * c..(i + 1) * c].iter_mut().zip(src) {
                                    *o += d;
                                }
                            }
                        });
                        offset += c;
                    }
                }
            }
            &Op::Sigmoid(x) => acc(x, &mut |g| {
                for (i, o) in g.iter_mut().enumerate() {
                    let s = y.data()[i];
                    *o += dy[i] * s * (1.0 - s);
                }
            }),
            &Op::Tanh(x) => acc(x, &mut |g| {
                for (i, o) in g.iter_mut().enumerate() {
                    let t = y.data()[i];
                    *o += dy[i] * (1.0 - t * t);
                }
            }),
            &Op::SoftmaxRows(x) => {
                let c = y.cols();
                acc(x, &mut |g| {
                    for i in 0..y.rows() {
                        let s = &y.data()[i * c..(i + 1) * c];
                        let d = &dy[i * c..(i + 1) * c];
                        let dot: f64 = s.iter().zip(d).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g[i * c + j] += s[j] * (d[j] - dot);
                        }
                    }
                });
            }
            &Op::LogSoftmaxRows(x) => {
                let c = y.cols();
                acc(x, &mut |g| {
                    for i in 0..y.rows() {
                        let ls = &y.data()[i * c..(i + 1) * c];
                        let d = &dy[i * c..(i + 1) * c];
                        let total: f64 = d.iter().sum();
                        for j in 0..c {
                            g[i * c + j] += d[j] - ls[j].exp() * total;
                        }
                    }
                });
            }
            &Op::LogSumExpRows(x) => {
                let src = val(x);
                let c = src.cols();
                acc(x, &mut |g| {
                    for i in 0..src.rows() {
                        let lse = y.data()[i];
                        for j in 0..c {
                            g[i * c + j] += dy[i] * (src.at(i, j) - lse).exp();
                        }
                    }
                });
            }
            Op::MaxOverRows { x, argmax } => {
                let c = argmax.len();
                acc(*x, &mut |g| {
                    for (j, &r) in argmax.iter().enumerate() {
                        g[r * c + j] += dy[j];
                    }
                });
            }
            Op::MaskFill { x, mask } => acc(*x, &mut |g| {
                for (i, o) in g.iter_mut().enumerate() {
                    if !mask[i] {
                        *o += dy[i];
                    }
                }
            }),
            &Op::Slice { x, axis, start } => {
                let src_cols = val(x).cols();
                let (r, c) = (y.rows(), y.cols());
                acc(x, &mut |g| {
                    if axis == 0 {
                        let base = start * src_cols;
                        g[base..base + r * c]
                            .iter_mut()
                            .zip(dy)
                            .for_each(|(o, d)| *o += d);
                    } else {
                        for i in 0..r {
                            for j in 0..c {
                                g[i * src_cols + start + j] += dy[i * c + j];
                            }
                        }
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |g| g.iter_mut().for_each(|o| *o += dy[0])),
            &Op::Mean(x) => {
                let n = val(x).len() as f64;
                acc(x, &mut |g| g.iter_mut().for_each(|o| *o += dy[0] / n));
            }
            &Op::Scale(x, f) => acc(x, &mut |g| {
                g.iter_mut().zip(dy).for_each(|(o, d)| *o += f * d)
            }),
            Op::GatherRows { table, ids } => {
                let c = y.cols();
                acc(*table, &mut |g| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            g[id * c + j] += dy[i * c + j];
                        }
                    }
                });
            }
            Op::Pick { x, cols } => {
                let c = val(*x).cols();
                acc(*x, &mut |g| {
                    for (i, &j) in cols.iter().enumerate() {
                        g[i * c + j] += dy[i];
                    }
                });
            }
            &Op::LogSigmoid { x, lo, hi } => {
                let src = val(x).data();
                acc(x, &mut |g| {
                    for (i, o) in g.iter_mut().enumerate() {
                        let v = src[i];
                        if v >= lo && v <= hi {
                            *o += dy[i] * sigmoid(-v);
                        }
                    }
                });
            }
            Op::Custom { inputs, grads: local } => {
                for (v, lg) in inputs.iter().zip(local) {
                    acc(*v, &mut |g| {
                        g.iter_mut()
                            .zip(lg.data())
                            .for_each(|(o, l)| *o += dy[0] * l)
                    });
                }
            }
        }
    }
}

//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation appends a node holding its forward value. Nodes are only
//! differentiable when at least one input is tracked; constants cost a node
//! but never receive gradient work. [`Tape::backward`] walks the nodes once in
//! reverse order and returns gradients for the tracked leaves.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    MatMulT,
    Transpose,
    AddRowBias,
    Conv2d3x3,
    MaxPool2x2,
    Relu,
    Exp,
    Log,
    Sum,
    Mean,
    MaxReduce,
    L2NormalizeRows,
    ConcatRows,
    SliceRows,
    Scale,
    LogSumExpRows,
    Reshape,
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    height: usize,
    width: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(OpKind, Var, Var),
    Unary(OpKind, Var),
    Scale(Var, f64),
    Conv { x: Var, w: Var, b: Var, dims: ConvDims },
    MaxPool { x: Var, argmax: Vec<usize> },
    MaxRows { x: Var, argmax: Vec<usize> },
    Normalize { x: Var, norms: Vec<f64> },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    LogSumExp { x: Var, mask: Option<Vec<bool>> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Binary(k, ..) | Op::Unary(k, _) => *k,
            Op::Scale(..) => OpKind::Scale,
            Op::Conv { .. } => OpKind::Conv2d3x3,
            Op::MaxPool { .. } => OpKind::MaxPool2x2,
            Op::MaxRows { .. } => OpKind::MaxReduce,
            Op::Normalize { .. } => OpKind::L2NormalizeRows,
            Op::Concat(_) => OpKind::ConcatRows,
            Op::Slice { .. } => OpKind::SliceRows,
            Op::LogSumExp { .. } => OpKind::LogSumExpRows,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients of a scalar output with respect to every tracked leaf.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_leaf: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_leaf.get(&v.0)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }

    pub fn contains(&self, v: Var) -> bool {
        self.by_leaf.contains_key(&v.0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = Var> + '_ {
        self.by_leaf.keys().map(|&k| Var(k))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
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

    /// Records an input. Tracked leaves receive gradients from `backward`.
    pub fn leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        value.check_finite(op_name(op.kind()))?;
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_map(
        &mut self,
        kind: OpKind,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op_name(kind), ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::Binary(kind, a, b), &[a, b])
    }

    fn map(&mut self, kind: OpKind, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::Unary(kind, a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(OpKind::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(OpKind::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(Error::DivisionByZero { op: "div" });
        }
        self.zip_map(OpKind::Div, a, b, |x, y| x / y)
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, n) = matrix_dims("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Binary(OpKind::MatMul, a, b), &[a, b])
    }

    /// `a (m x k) * b^T` for `b (n x k)`; the similarity-matrix workhorse.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul_t", self.value(a))?;
        let (n, k2) = matrix_dims("matmul_t", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul_t", format!("[{m}, {k}] x [{n}, {k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, false);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Binary(OpKind::MatMulT, a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Unary(OpKind::Transpose, a), &[a])
    }

    /// Adds the bias vector `b` (length `m`) to every row of `a (n x m)`.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = matrix_dims("add_row_bias", self.value(a))?;
        if self.value(b).len() != m {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for rows of width {m}", self.value(b).shape()),
            ));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        debug_assert_eq!(data.len(), n * m);
        self.push(Tensor::from_parts(vec![n, m], data), Op::Binary(OpKind::AddRowBias, a, b), &[a, b])
    }

    /// 3x3, stride-1, zero-padded convolution. `x` is `[batch, in, h, w]`,
    /// `w` is `[out, in, 3, 3]`, `b` has `out` entries.
    pub fn conv2d_3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, in_ch, height, width) = match *self.value(x).shape() {
            [b, c, h, w] => (b, c, h, w),
            ref s => return Err(Error::shape("conv2d_3x3", format!("input must be 4-D, got {s:?}"))),
        };
        let out_ch = match *self.value(w).shape() {
            [o, c, 3, 3] if c == in_ch => o,
            ref s => {
                return Err(Error::shape(
                    "conv2d_3x3",
                    format!("weight {s:?} for {in_ch} input channels"),
                ))
            }
        };
        if self.value(b).len() != out_ch {
            return Err(Error::shape("conv2d_3x3", "bias length differs from output channels"));
        }
        let dims = ConvDims {
            batch,
            in_ch,
            out_ch,
            height,
            width,
        };
        let hw = height * width;
        let k9 = in_ch * 9;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let mut out = vec![0.0; batch * out_ch * hw];
        let mut cols = vec![0.0; k9 * hw];
        for n in 0..batch {
            im2col(&xs[n * in_ch * hw..(n + 1) * in_ch * hw], dims, &mut cols);
            let dst = &mut out[n * out_ch * hw..(n + 1) * out_ch * hw];
            for (o, chunk) in dst.chunks_mut(hw).enumerate() {
                chunk.fill(bs[o]);
            }
            gemm(out_ch, k9, hw, ws, false, &cols, false, dst, true);
        }
        let value = Tensor::from_parts(vec![batch, out_ch, height, width], out);
        self.push(value, Op::Conv { x, w, b, dims }, &[x, w, b])
    }

    /// 2x2 max pooling with stride 2 over `[batch, ch, h, w]`.
    pub fn max_pool_2x2(&mut self, x: Var) -> Result<Var> {
        let (batch, ch, h, w) = match *self.value(x).shape() {
            [b, c, h, w] if h >= 2 && w >= 2 => (b, c, h, w),
            ref s => return Err(Error::shape("max_pool_2x2", format!("{s:?}"))),
        };
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(batch * ch * ho * wo);
        let mut argmax = Vec::with_capacity(batch * ch * ho * wo);
        for plane in 0..batch * ch {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_parts(vec![batch, ch, ho, wo], out);
        self.push(value, Op::MaxPool { x, argmax }, &[x])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(OpKind::Relu, a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(OpKind::Exp, a, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(OpKind::Log, a, f64::ln)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| c * x).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Sum of every element, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Unary(OpKind::Sum, a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::DivisionByZero { op: "mean" });
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Unary(OpKind::Mean, a), &[a])
    }

    /// Row-wise maximum of an `n x m` matrix, giving `n x 1`.
    pub fn max_reduce(&mut self, a: Var) -> Result<Var> {
        let (n, m) = matrix_dims("max_reduce", self.value(a))?;
        if m == 0 {
            return Err(Error::shape("max_reduce", "empty rows"));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        for i in 0..n {
            let row = t.row(i);
            let mut best = 0;
            for j in 1..m {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            argmax.push(i * m + best);
        }
        self.push(Tensor::from_parts(vec![n, 1], out), Op::MaxRows { x: a, argmax }, &[a])
    }

    /// Scales every row to unit Euclidean norm. A zero row is a division by zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = matrix_dims("l2_normalize_rows", self.value(a))?;
        let t = self.value(a);
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = t.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DivisionByZero { op: "l2_normalize_rows" });
            }
            norms.push(norm);
            out.extend(row.iter().map(|v| v / norm));
        }
        self.push(Tensor::from_parts(vec![n, m], out), Op::Normalize { x: a, norms }, &[a])
    }

    /// Stacks tensors along the leading dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let tail: Vec<usize> = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != tail.len() + 1 || t.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{:?} vs trailing {tail:?}", t.shape()),
                ));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().is_empty() || start + len > t.shape()[0] {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, t.shape()),
            ));
        }
        let out = t.slice_rows(start, len);
        self.push(out, Op::Slice { x: a, start }, &[a])
    }

    /// Row-wise `log(sum_j exp(a_ij))` over the entries where `mask` is true
    /// (all entries when `mask` is `None`), giving `n x 1`.
    pub fn logsumexp_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (n, m) = matrix_dims("logsumexp_rows", self.value(a))?;
        if let Some(mask) = &mask {
            if mask.len() != n * m {
                return Err(Error::shape("logsumexp_rows", "mask size differs from input"));
            }
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = t.row(i);
            let keep = |j: usize| mask.as_ref().is_none_or(|mk| mk[i * m + j]);
            let mx = (0..m).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::shape("logsumexp_rows", format!("row {i} has no unmasked entries")));
            }
            let s: f64 = (0..m).filter(|&j| keep(j)).map(|j| (row[j] - mx).exp()).sum();
            out.push(mx + s.ln());
        }
        self.push(Tensor::from_parts(vec![n, 1], out), Op::LogSumExp { x: a, mask }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(out, Op::Unary(OpKind::Reshape, a), &[a])
    }

    /// Gradients of the scalar `output` with respect to every tracked leaf.
    /// The tape can be differentiated once.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_value = self.value(output);
        if !out_value.is_scalar() {
            return Err(Error::NotScalar(out_value.shape().to_vec()));
        }
        self.consumed = true;
        let mut result = Gradients::default();
        if !self.nodes[output.0].tracked {
            return Ok(result);
        }

        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let tracked = |v: Var| self.nodes[v.0].tracked;
            let val = |v: Var| self.nodes[v.0].value.data();
            let mut send = |v: Var, contrib: Vec<f64>| accumulate(&mut grads, v, contrib);

            match &node.op {
                Op::Leaf => {
                    result
                        .by_leaf
                        .insert(i, Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Binary(kind, a, b) => {
                    let (a, b) = (*a, *b);
                    match kind {
                        OpKind::Add => {
                            if tracked(a) {
                                send(a, g.clone());
                            }
                            if tracked(b) {
                                send(b, g);
                            }
                        }
                        OpKind::Sub => {
                            if tracked(a) {
                                send(a, g.clone());
                            }
                            if tracked(b) {
                                send(b, g.iter().map(|v| -v).collect());
                            }
                        }
                        OpKind::Mul => {
                            if tracked(a) {
                                send(a, g.iter().zip(val(b)).map(|(g, y)| g * y).collect());
                            }
                            if tracked(b) {
                                send(b, g.iter().zip(val(a)).map(|(g, x)| g * x).collect());
                            }
                        }
                        OpKind::Div => {
                            if tracked(a) {
                                send(a, g.iter().zip(val(b)).map(|(g, y)| g / y).collect());
                            }
                            if tracked(b) {
                                let gb = g
                                    .iter()
                                    .zip(val(a).iter().zip(val(b)))
                                    .map(|(g, (x, y))| -g * x / (y * y))
                                    .collect();
                                send(b, gb);
                            }
                        }
                        OpKind::MatMul => {
                            let sa = self.nodes[a.0].value.shape();
                            let sb = self.nodes[b.0].value.shape();
                            let (m, k, n) = (sa[0], sa[1], sb[1]);
                            if tracked(a) {
                                let mut ga = vec![0.0; m * k];
                                gemm(m, n, k, &g, false, val(b), true, &mut ga, false);
                                send(a, ga);
                            }
                            if tracked(b) {
                                let mut gb = vec![0.0; k * n];
                                gemm(k, m, n, val(a), true, &g, false, &mut gb, false);
                                send(b, gb);
                            }
                        }
                        OpKind::MatMulT => {
                            let sa = self.nodes[a.0].value.shape();
                            let sb = self.nodes[b.0].value.shape();
                            let (m, k, n) = (sa[0], sa[1], sb[0]);
                            if tracked(a) {
                                let mut ga = vec![0.0; m * k];
                                gemm(m, n, k, &g, false, val(b), false, &mut ga, false);
                                send(a, ga);
                            }
                            if tracked(b) {
                                let mut gb = vec![0.0; n * k];
                                gemm(n, m, k, &g, true, val(a), false, &mut gb, false);
                                send(b, gb);
                            }
                        }
                        OpKind::AddRowBias => {
                            let m = self.nodes[b.0].value.len();
                            if tracked(b) {
                                let mut gb = vec![0.0; m];
                                for row in g.chunks(m) {
                                    for (acc, v) in gb.iter_mut().zip(row) {
                                        *acc += v;
                                    }
                                }
                                send(b, gb);
                            }
                            if tracked(a) {
                                send(a, g);
                            }
                        }
                        other => unreachable!("binary op {other:?}"),
                    }
                }
                Op::Unary(kind, a) => {
                    let a = *a;
                    if !tracked(a) {
                        continue;
                    }
                    let ga = match kind {
                        OpKind::Relu => g
                            .iter()
                            .zip(val(a))
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                            .collect(),
                        OpKind::Exp => g.iter().zip(node.value.data()).map(|(g, y)| g * y).collect(),
                        OpKind::Log => g.iter().zip(val(a)).map(|(g, x)| g / x).collect(),
                        OpKind::Sum => vec![g[0]; val(a).len()],
                        OpKind::Mean => {
                            let n = val(a).len();
                            vec![g[0] / n as f64; n]
                        }
                        OpKind::Transpose => {
                            let s = node.value.shape();
                            Tensor::from_parts(s.to_vec(), g).transpose()?.into_data()
                        }
                        OpKind::Reshape => g,
                        other => unreachable!("unary op {other:?}"),
                    };
                    send(a, ga);
                }
                Op::Scale(a, c) => {
                    if tracked(*a) {
                        send(*a, g.iter().map(|v| c * v).collect());
                    }
                }
                Op::Conv { x, w, b, dims } => {
                    let (x, w, b, d) = (*x, *w, *b, *dims);
                    let hw = d.height * d.width;
                    let k9 = d.in_ch * 9;
                    let xs = val(x);
                    let ws = val(w);
                    let mut gw = tracked(w).then(|| vec![0.0; d.out_ch * k9]);
                    let mut gb = tracked(b).then(|| vec![0.0; d.out_ch]);
                    let mut gx = tracked(x).then(|| vec![0.0; d.batch * d.in_ch * hw]);
                    let mut cols = vec![0.0; k9 * hw];
                    let mut gcols = vec![0.0; k9 * hw];
                    for n in 0..d.batch {
                        let gn = &g[n * d.out_ch * hw..(n + 1) * d.out_ch * hw];
                        if let Some(gb) = gb.as_mut() {
                            for (o, chunk) in gn.chunks(hw).enumerate() {
                                gb[o] += chunk.iter().sum::<f64>();
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            im2col(&xs[n * d.in_ch * hw..(n + 1) * d.in_ch * hw], d, &mut cols);
                            gemm(d.out_ch, hw, k9, gn, false, &cols, true, gw, true);
                        }
                        if let Some(gx) = gx.as_mut() {
                            gemm(k9, d.out_ch, hw, ws, true, gn, false, &mut gcols, false);
                            col2im(&gcols, d, &mut gx[n * d.in_ch * hw..(n + 1) * d.in_ch * hw]);
                        }
                    }
                    if let Some(gw) = gw {
                        send(w, gw);
                    }
                    if let Some(gb) = gb {
                        send(b, gb);
                    }
                    if let Some(gx) = gx {
                        send(x, gx);
                    }
                }
                Op::MaxPool { x, argmax } | Op::MaxRows { x, argmax } => {
                    if tracked(*x) {
                        let mut gx = vec![0.0; val(*x).len()];
                        for (gv, &idx) in g.iter().zip(argmax) {
                            gx[idx] += gv;
                        }
                        send(*x, gx);
                    }
                }
                Op::Normalize { x, norms } => {
                    if tracked(*x) {
                        let m = node.value.cols();
                        let y = node.value.data();
                        let mut gx = vec![0.0; y.len()];
                        for (i, norm) in norms.iter().enumerate() {
                            let yr = &y[i * m..(i + 1) * m];
                            let gr = &g[i * m..(i + 1) * m];
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..m {
                                gx[i * m + j] = (gr[j] - yr[j] * dot) / norm;
                            }
                        }
                        send(*x, gx);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).len();
                        if tracked(p) {
                            send(p, g[offset..offset + len].to_vec());
                        }
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    if tracked(*x) {
                        let src = &self.nodes[x.0].value;
                        let c = src.cols();
                        let mut gx = vec![0.0; src.len()];
                        gx[start * c..start * c + g.len()].copy_from_slice(&g);
                        send(*x, gx);
                    }
                }
                Op::LogSumExp { x, mask } => {
                    if tracked(*x) {
                        let src = &self.nodes[x.0].value;
                        let m = src.cols();
                        let lse = node.value.data();
                        let mut gx = vec![0.0; src.len()];
                        for (i, (&gi, &l)) in g.iter().zip(lse).enumerate() {
                            let row = src.row(i);
                            for j in 0..m {
                                if mask.as_ref().is_none_or(|mk| mk[i * m + j]) {
                                    gx[i * m + j] = gi * (row[j] - l).exp();
                                }
                            }
                        }
                        send(*x, gx);
                    }
                }
            }
        }
        Ok(result)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn im2col(x: &[f64], d: ConvDims, cols: &mut [f64]) {
    let (h, w) = (d.height as isize, d.width as isize);
    let hw = d.height * d.width;
    for c in 0..d.in_ch {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = &mut cols[(c * 9 + (ky * 3 + kx) as usize) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky - 1;
                    for xx in 0..w {
                        let sx = xx + kx - 1;
                        row[(y * w + xx) as usize] = if sy >= 0 && sy < h && sx >= 0 && sx < w {
                            plane[(sy * w + sx) as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: ConvDims, gx: &mut [f64]) {
    let (h, w) = (d.height as isize, d.width as isize);
    let hw = d.height * d.width;
    for c in 0..d.in_ch {
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = &cols[(c * 9 + (ky * 3 + kx) as usize) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx + kx - 1;
                        if sx >= 0 && sx < w {
                            gx[c * hw + (sy * w + sx) as usize] += row[(y * w + xx) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::Div => "div",
        OpKind::MatMul => "matmul",
        OpKind::MatMulT => "matmul_t",
        OpKind::Transpose => "transpose",
        OpKind::AddRowBias => "add_row_bias",
        OpKind::Conv2d3x3 => "conv2d_3x3",
        OpKind::MaxPool2x2 => "max_pool_2x2",
        OpKind::Relu => "relu",
        OpKind::Exp => "exp",
        OpKind::Log => "log",
        OpKind::Sum => "sum",
        OpKind::Mean => "mean",
        OpKind::MaxReduce => "max_reduce",
        OpKind::L2NormalizeRows => "l2_normalize_rows",
        OpKind::ConcatRows => "concat_rows",
        OpKind::SliceRows => "slice_rows",
        OpKind::Scale => "scale",
        OpKind::LogSumExpRows => "logsumexp_rows",
        OpKind::Reshape => "reshape",
    }
}

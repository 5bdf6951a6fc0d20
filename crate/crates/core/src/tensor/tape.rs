use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use super::kernels::{axis_index, axis_split, gemm};
use super::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::math;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Sigmoid(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    LogSumExp(usize, usize),
    Broadcast(usize, usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        src: usize,
        start: usize,
    },
    RepeatRows {
        src: usize,
        times: usize,
    },
    Reshape(usize),
    /// Matrix plus a `[1, cols]` row added to every row.
    AddRow(usize, usize),
    /// Row sums of `x·l − softplus(l)` for logits `l` and targets `x`.
    BernoulliLogLik {
        logits: usize,
        x: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Record of one forward computation.
///
/// Operations are appended in evaluation order, so the node list is always a
/// valid topological order and [`Tape::backward`] is a single reverse sweep.
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                grads: Vec::new(),
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A tracked leaf: gradients flow into it.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An untracked leaf (data, noise).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op, tracked });
        inner.grads.push(None);
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn tracked(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].tracked
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let inner = self.inner.borrow();
        inner.grads[v.id]
            .as_ref()
            .map(|g| Tensor::from_parts(inner.nodes[v.id].value.shape.clone(), g.clone()))
    }

    /// Gradient of a node, zeros when no backward pass reached it.
    pub fn grad_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.inner.borrow().nodes[v.id].value.shape.clone()))
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grads.iter_mut().for_each(|g| *g = None);
    }

    /// Reverse sweep from a tracked scalar. Gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&self, output: Var<'_>) -> Result<()> {
        if !core::ptr::eq(output.tape, self) {
            return Err(Error::Contract("backward on a foreign tape".into()));
        }
        let mut inner = self.inner.borrow_mut();
        let Inner { nodes, grads } = &mut *inner;
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape
            )));
        }
        if !out.tracked {
            return Err(Error::Contract("backward on an untracked tensor".into()));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; output.id + 1];
        local[output.id] = Some(vec![1.0]);
        for id in (0..=output.id).rev() {
            let Some(g) = local[id].take() else { continue };
            if !nodes[id].tracked {
                continue;
            }
            propagate(nodes, id, &g, &mut local);
            match &mut grads[id] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let inner = self.inner.borrow();
        let rows = inner.nodes[first.id].value.rows();
        let mut total = 0;
        for p in parts {
            let t = &inner.nodes[p.id].value;
            if t.shape.len() != 2 || t.rows() != rows {
                return Err(dim_err("concat_cols", &inner.nodes[first.id].value.shape, &t.shape));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(inner.nodes[p.id].value.row_slice(r));
            }
        }
        let tracked = parts.iter().any(|p| inner.nodes[p.id].tracked);
        let ids = parts.iter().map(|p| p.id).collect();
        drop(inner);
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(ids),
            tracked,
        ))
    }
}

fn slot(local: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut [f64] {
    local[id].get_or_insert_with(|| vec![0.0; len])
}

/// Pushes the upstream gradient `g` of node `id` into its inputs.
fn propagate(nodes: &[Node], id: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let tracked = |i: usize| nodes[i].tracked;
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        &Op::Matmul(a, b) => {
            let (m, k) = (val(a).shape[0], val(a).shape[1]);
            let n = val(b).shape[1];
            if tracked(a) {
                let ga = slot(local, a, m * k);
                gemm(m, n, k, g, false, &val(b).data, true, ga, true);
            }
            if tracked(b) {
                let gb = slot(local, b, k * n);
                gemm(k, m, n, &val(a).data, true, g, false, gb, true);
            }
        }
        &Op::Add(a, b) | &Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            for (input, s) in [(a, 1.0), (b, sign)] {
                if tracked(input) {
                    let n = val(input).len();
                    let gi = slot(local, input, n);
                    reduce_into(gi, g, s);
                }
            }
        }
        &Op::Mul(a, b) => {
            for (input, other) in [(a, b), (b, a)] {
                if tracked(input) {
                    let n = val(input).len();
                    let o = &val(other).data;
                    let gi = slot(local, input, n);
                    if n == g.len() {
                        if o.len() == 1 {
                            gi.iter_mut().zip(g).for_each(|(x, gv)| *x += gv * o[0]);
                        } else {
                            gi.iter_mut()
                                .zip(g.iter().zip(o))
                                .for_each(|(x, (gv, ov))| *x += gv * ov);
                        }
                    } else {
                        gi[0] += g.iter().zip(o).map(|(gv, ov)| gv * ov).sum::<f64>();
                    }
                }
            }
        }
        &Op::Scale(a, c) => {
            let gi = slot(local, a, g.len());
            gi.iter_mut().zip(g).for_each(|(x, gv)| *x += c * gv);
        }
        &Op::Shift(a) | &Op::Reshape(a) => {
            let gi = slot(local, a, g.len());
            gi.iter_mut().zip(g).for_each(|(x, gv)| *x += gv);
        }
        &Op::Neg(a) => {
            let gi = slot(local, a, g.len());
            gi.iter_mut().zip(g).for_each(|(x, gv)| *x -= gv);
        }
        &Op::Exp(a) => unary_grad(local, a, g, &node.value.data, |y| y),
        &Op::Tanh(a) => unary_grad(local, a, g, &node.value.data, |y| 1.0 - y * y),
        &Op::Sigmoid(a) => unary_grad(local, a, g, &node.value.data, |y| y * (1.0 - y)),
        &Op::Log(a) => unary_grad(local, a, g, &val(a).data, |x| 1.0 / x),
        &Op::Relu(a) => unary_grad(local, a, g, &val(a).data, |x| if x > 0.0 { 1.0 } else { 0.0 }),
        &Op::Softplus(a) => unary_grad(local, a, g, &val(a).data, math::sigmoid),
        &Op::AddRow(a, row) => {
            if tracked(a) {
                reduce_into(slot(local, a, g.len()), g, 1.0);
            }
            if tracked(row) {
                let cols = val(row).len();
                let gr = slot(local, row, cols);
                for chunk in g.chunks(cols.max(1)) {
                    gr.iter_mut().zip(chunk).for_each(|(o, gv)| *o += gv);
                }
            }
        }
        &Op::BernoulliLogLik { logits, x } => {
            let cols = val(logits).shape[1];
            let (l, xv) = (&val(logits).data, &val(x).data);
            if tracked(logits) {
                let gi = slot(local, logits, l.len());
                for (r, gr) in g.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    for ((o, lv), xe) in gi[span.clone()].iter_mut().zip(&l[span.clone()]).zip(&xv[span]) {
                        *o += gr * (xe - math::sigmoid(*lv));
                    }
                }
            }
            if tracked(x) {
                let gi = slot(local, x, xv.len());
                for (r, gr) in g.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    for (o, lv) in gi[span.clone()].iter_mut().zip(&l[span]) {
                        *o += gr * lv;
                    }
                }
            }
        }
        &Op::SumAll(a) => {
            let n = val(a).len();
            let gi = slot(local, a, n);
            gi.iter_mut().for_each(|x| *x += g[0]);
        }
        &Op::SumAxis(a, axis) => {
            let (outer, extent, inner) = axis_split(&val(a).shape, axis);
            let gi = slot(local, a, outer * extent * inner);
            for o in 0..outer {
                for j in 0..extent {
                    for i in 0..inner {
                        gi[axis_index(o, j, i, extent, inner)] += g[o * inner + i];
                    }
                }
            }
        }
        &Op::LogSumExp(a, axis) => {
            let x = &val(a).data;
            let y = &node.value.data;
            let (outer, extent, inner) = axis_split(&val(a).shape, axis);
            let gi = slot(local, a, x.len());
            for o in 0..outer {
                for i in 0..inner {
                    let k = o * inner + i;
                    for j in 0..extent {
                        let idx = axis_index(o, j, i, extent, inner);
                        gi[idx] += g[k] * math::exp(x[idx] - y[k]);
                    }
                }
            }
        }
        &Op::Broadcast(a, axis) => {
            let (outer, extent, inner) = axis_split(&node.value.shape, axis);
            let gi = slot(local, a, outer * inner);
            for o in 0..outer {
                for j in 0..extent {
                    for i in 0..inner {
                        gi[o * inner + i] += g[axis_index(o, j, i, extent, inner)];
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let rows = node.value.rows();
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let c = val(p).cols();
                if tracked(p) {
                    let gi = slot(local, p, rows * c);
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + c];
                        gi[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(x, gv)| *x += gv);
                    }
                }
                offset += c;
            }
        }
        &Op::SliceCols { src, start } => {
            let rows = node.value.rows();
            let width = node.value.cols();
            let total = val(src).cols();
            let gi = slot(local, src, rows * total);
            for r in 0..rows {
                gi[r * total + start..r * total + start + width]
                    .iter_mut()
                    .zip(&g[r * width..(r + 1) * width])
                    .for_each(|(x, gv)| *x += gv);
            }
        }
        &Op::RepeatRows { src, times } => {
            let rows = val(src).rows();
            let c = val(src).cols();
            let gi = slot(local, src, rows * c);
            for r in 0..rows {
                let dst = &mut gi[r * c..(r + 1) * c];
                for t in 0..times {
                    let off = (r * times + t) * c;
                    dst.iter_mut().zip(&g[off..off + c]).for_each(|(x, gv)| *x += gv);
                }
            }
        }
    }
}

/// Adds `s·g` into `gi`, summing `g` when `gi` is a broadcast scalar.
fn reduce_into(gi: &mut [f64], g: &[f64], s: f64) {
    if gi.len() == g.len() {
        gi.iter_mut().zip(g).for_each(|(x, gv)| *x += s * gv);
    } else {
        gi[0] += s * g.iter().sum::<f64>();
    }
}

fn unary_grad(local: &mut [Option<Vec<f64>>], a: usize, g: &[f64], saved: &[f64], deriv: impl Fn(f64) -> f64) {
    let gi = slot(local, a, g.len());
    for ((x, gv), s) in gi.iter_mut().zip(g).zip(saved) {
        *x += gv * deriv(*s);
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.inner.borrow(), |i| &i.nodes[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// Same value on the tape with no gradient path back to `self`.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.to_tensor())
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if core::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands live on different tapes".into()))
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.push(out, op, self.is_tracked())
    }

    fn binary(&self, other: &Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let out = {
            let a = self.value();
            let b = other.value();
            if a.shape == b.shape {
                Tensor::from_parts(
                    a.shape.clone(),
                    a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
                )
            } else if b.len() == 1 {
                let y = b.data[0];
                a.map(|x| f(x, y))
            } else if a.len() == 1 {
                let x = a.data[0];
                b.map(|y| f(x, y))
            } else {
                return Err(dim_err(name, &a.shape, &b.shape));
            }
        };
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.push(out, op, tracked))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let out = {
            let a = self.value();
            let b = other.value();
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(dim_err("matmul", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a.data, false, &b.data, false, &mut c, false);
            Tensor::from_parts(vec![m, n], c)
        };
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.push(out, Op::Matmul(self.id, other.id), tracked))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |x, y| x * y)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::Shift(self.id), |x| x + c)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), math::exp)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Var<'t>> {
        if let Some(bad) = self.value().data.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(Op::Log(self.id), math::ln))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), math::tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), math::softplus)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), math::sigmoid)
    }

    pub fn square(&self) -> Var<'t> {
        self.binary(self, "square", Op::Mul(self.id, self.id), |x, y| x * y)
            .expect("operand matches itself")
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data.iter().sum::<f64>();
        self.tape
            .push(Tensor::scalar(s), Op::SumAll(self.id), self.is_tracked())
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    fn check_axis(&self, axis: usize, name: &'static str) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(dim_err(name, &shape, &[axis]));
        }
        Ok(shape)
    }

    /// Adds the `[1, cols]` row `row` to every row of the matrix `self`.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(row)?;
        let out = {
            let a = self.value();
            let r = row.value();
            if a.shape.len() != 2 || r.shape != [1, a.shape[1]] {
                return Err(dim_err("add_row", &a.shape, &r.shape));
            }
            let mut data = a.data.clone();
            for chunk in data.chunks_mut(a.shape[1].max(1)) {
                chunk.iter_mut().zip(&r.data).for_each(|(o, b)| *o += b);
            }
            Tensor::from_parts(a.shape.clone(), data)
        };
        let tracked = self.is_tracked() || row.is_tracked();
        Ok(self.tape.push(out, Op::AddRow(self.id, row.id), tracked))
    }

    /// Bernoulli log-likelihood of `x` under logits `self`, summed per row
    /// into `[rows, 1]`. Both operands must be matrices of the same shape.
    pub fn bernoulli_log_lik(&self, x: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(x)?;
        let out = {
            let l = self.value();
            let xv = x.value();
            if l.shape.len() != 2 || l.shape != xv.shape {
                return Err(dim_err("bernoulli_log_lik", &l.shape, &xv.shape));
            }
            let (rows, cols) = (l.shape[0], l.shape[1]);
            let data = (0..rows)
                .map(|r| {
                    let span = r * cols..(r + 1) * cols;
                    l.data[span.clone()]
                        .iter()
                        .zip(&xv.data[span])
                        .map(|(lv, xe)| xe * lv - math::softplus(*lv))
                        .sum()
                })
                .collect();
            Tensor::from_parts(vec![l.shape[0], 1], data)
        };
        let tracked = self.is_tracked() || x.is_tracked();
        Ok(self.tape.push(
            out,
            Op::BernoulliLogLik {
                logits: self.id,
                x: x.id,
            },
            tracked,
        ))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "sum_axis")?;
        let (outer, extent, inner) = axis_split(&shape, axis);
        let out = {
            let x = &self.value().data;
            let mut y = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..extent {
                    for i in 0..inner {
                        y[o * inner + i] += x[axis_index(o, j, i, extent, inner)];
                    }
                }
            }
            let mut s = shape.clone();
            s[axis] = 1;
            Tensor::from_parts(s, y)
        };
        Ok(self.tape.push(out, Op::SumAxis(self.id, axis), self.is_tracked()))
    }

    /// `max + ln Σ exp(x − max)` along `axis`, keeping it with extent 1.
    pub fn log_sum_exp(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "log_sum_exp")?;
        let (outer, extent, inner) = axis_split(&shape, axis);
        if extent == 0 {
            return Err(Error::Domain("log_sum_exp over an empty axis".into()));
        }
        let out = {
            let x = &self.value().data;
            let mut y = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j| x[axis_index(o, j, i, extent, inner)];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..extent {
                        max = max.max(at(j));
                    }
                    let mut s = 0.0;
                    for j in 0..extent {
                        s += math::exp(at(j) - max);
                    }
                    y[o * inner + i] = max + math::ln(s);
                }
            }
            let mut s = shape.clone();
            s[axis] = 1;
            Tensor::from_parts(s, y)
        };
        Ok(self.tape.push(out, Op::LogSumExp(self.id, axis), self.is_tracked()))
    }

    /// Expands an extent-1 `axis` to `n` copies.
    pub fn broadcast_axis(&self, axis: usize, n: usize) -> Result<Var<'t>> {
        let shape = self.check_axis(axis, "broadcast_axis")?;
        if shape[axis] != 1 {
            return Err(dim_err("broadcast_axis", &shape, &[axis, n]));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = n;
        let (outer, _, inner) = axis_split(&shape, axis);
        let out = {
            let x = &self.value().data;
            let mut y = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    y.extend_from_slice(&x[o * inner..(o + 1) * inner]);
                }
            }
            Tensor::from_parts(out_shape, y)
        };
        Ok(self.tape.push(out, Op::Broadcast(self.id, axis), self.is_tracked()))
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax_rows(&self) -> Result<Var<'t>> {
        let cols = self.value().cols();
        let lse = self.log_sum_exp(1)?.broadcast_axis(1, cols)?;
        self.sub(&lse)
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            if x.shape.len() != 2 || start + len > x.shape[1] {
                return Err(dim_err("slice_cols", &x.shape, &[start, len]));
            }
            let rows = x.shape[0];
            let mut y = Vec::with_capacity(rows * len);
            for r in 0..rows {
                y.extend_from_slice(&x.row_slice(r)[start..start + len]);
            }
            Tensor::from_parts(vec![rows, len], y)
        };
        Ok(self
            .tape
            .push(out, Op::SliceCols { src: self.id, start }, self.is_tracked()))
    }

    /// Repeats each row `times` times consecutively: row `r` lands at
    /// rows `r*times .. (r+1)*times`.
    pub fn repeat_rows(&self, times: usize) -> Result<Var<'t>> {
        let out = {
            let x = self.value();
            if x.shape.is_empty() {
                return Err(dim_err("repeat_rows", &x.shape, &[times]));
            }
            let c = x.cols();
            let mut y = Vec::with_capacity(x.len() * times);
            for r in 0..x.rows() {
                for _ in 0..times {
                    y.extend_from_slice(&x.data[r * c..(r + 1) * c]);
                }
            }
            let mut s = x.shape.clone();
            s[0] *= times;
            Tensor::from_parts(s, y)
        };
        Ok(self
            .tape
            .push(out, Op::RepeatRows { src: self.id, times }, self.is_tracked()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.to_tensor().reshape(shape.to_vec())?;
        Ok(self.tape.push(out, Op::Reshape(self.id), self.is_tracked()))
    }
}

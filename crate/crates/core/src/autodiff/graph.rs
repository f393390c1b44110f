//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep. Every
//! operation works on 2-D tensors and never broadcasts implicitly; the two
//! shape adapters (`add_row`, `scale_rows`) name their broadcast explicitly.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule attached to a node.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m × n` plus a `1 × n` row repeated over every row.
    AddRow(Var, Var),
    /// `m × n` with row `i` multiplied by entry `i` of an `m × 1` column.
    ScaleRows(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Powf(Var, f64),
    LnClamped(Var, f64),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Result<Var> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{op:?} output at index {pos}")));
        }
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), op, rg))
    }

    /// Trainable leaf: gradients are tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input leaf: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Accumulated gradient of `v`; zeros when nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts_unchecked(value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        self.push_checked(vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if (ta.rows(), ta.cols()) != (tb.rows(), tb.cols()) {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = vec![ta.rows(), ta.cols()];
        self.push_checked(shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = (ta.rows(), ta.cols());
        if tr.rows() != 1 || tr.cols() != n {
            return Err(dim_err("add_row", ta, tr));
        }
        let r = tr.data();
        let data = ta
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x + y))
            .collect();
        self.push_checked(vec![m, n], data, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        let (m, n) = (ta.rows(), ta.cols());
        if tc.rows() != m || tc.cols() != 1 {
            return Err(dim_err("scale_rows", ta, tc));
        }
        let w = tc.data();
        let data = ta
            .data()
            .chunks(n)
            .zip(w)
            .flat_map(|(chunk, &s)| chunk.iter().map(move |&x| x * s))
            .collect();
        self.push_checked(vec![m, n], data, Op::ScaleRows(a, col), &[a, col])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let shape = vec![ta.rows(), ta.cols()];
        let data = ta.data().iter().map(|&x| f(x)).collect();
        self.push_checked(shape, data, op, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    /// `s·a + c`, elementwise.
    pub fn affine(&mut self, a: Var, s: f64, c: f64) -> Result<Var> {
        self.unary(a, Op::Affine(a, s), |x| s * x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// `a^p` for nonnegative `a`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(Error::contract(format!("powf of negative base {x}")));
        }
        self.unary(a, Op::Powf(a, p), |x| x.powf(p))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        if floor <= 0.0 {
            return Err(Error::contract("ln_clamped floor must be positive"));
        }
        self.unary(a, Op::LnClamped(a, floor), |x| x.max(floor).ln())
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if n == 0 {
            return Err(Error::contract("softmax over empty rows"));
        }
        let mut data = Vec::with_capacity(m * n);
        for row in ta.data().chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut total = 0.0;
            for &x in row {
                let e = (x - max).exp();
                total += e;
                data.push(e);
            }
            for e in &mut data[start..] {
                *e /= total;
            }
        }
        self.push_checked(vec![m, n], data, Op::SoftmaxRows(a), &[a])
    }

    /// Horizontal concatenation; all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let m = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != m {
                return Err(dim_err("concat_cols", self.value(first), t));
            }
            widths.push(t.cols());
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push_checked(vec![m, n], data, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Vertical stacking; all parts share the column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("stack of zero tensors"))?;
        let n = self.value(first).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(dim_err("stack_rows", self.value(first), t));
            }
            m += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push_checked(vec![m, n], data, Op::StackRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if len == 0 || start + len > n {
            return Err(Error::contract(format!(
                "column slice {start}..{} out of range for width {n}",
                start + len
            )));
        }
        let data = ta
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push_checked(vec![m, len], data, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if len == 0 || start + len > m {
            return Err(Error::contract(format!(
                "row slice {start}..{} out of range for height {m}",
                start + len
            )));
        }
        let data = ta.data()[start * n..(start + len) * n].to_vec();
        self.push_checked(vec![len, n], data, Op::SliceRows(a, start), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let src = ta.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        self.push_checked(vec![n, m], data, Op::Transpose(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push_checked(vec![1, 1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push_checked(vec![1, 1], vec![s], Op::Mean(a), &[a])
    }

    /// `m × n` → `m × 1` row sums.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let data = t.data().chunks(n).map(|r| r.iter().sum()).collect();
        self.push_checked(vec![m, 1], data, Op::RowSum(a), &[a])
    }

    /// Reverse sweep from a scalar node. Gradients add onto whatever is
    /// already stored, so repeated calls accumulate until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        // Seed on a fresh buffer so earlier accumulation on inner nodes does
        // not get propagated a second time.
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(up) = pending[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &up, &mut pending);
            let own = &mut self.grads[i];
            accumulate(own, up.len(), |g| {
                for (a, b) in g.iter_mut().zip(&up) {
                    *a += b;
                }
            });
        }
        Ok(())
    }

    fn propagate(&self, i: usize, up: &[f64], pending: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    // dA = dC · Bᵀ
                    accumulate(&mut pending[a.0], m * k, |g| {
                        for r in 0..m {
                            let urow = &up[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &tb.data()[p * n..(p + 1) * n];
                                g[r * k + p] +=
                                    urow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if needs(*b) {
                    // dB = Aᵀ · dC
                    accumulate(&mut pending[b.0], k * n, |g| {
                        for r in 0..m {
                            let urow = &up[r * n..(r + 1) * n];
                            for p in 0..k {
                                let av = ta.data()[r * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for (gv, &u) in g[p * n..(p + 1) * n].iter_mut().zip(urow) {
                                    *gv += av * u;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        accumulate(&mut pending[v.0], up.len(), |g| add_into(g, up));
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(&mut pending[a.0], up.len(), |g| add_into(g, up));
                }
                if needs(*b) {
                    accumulate(&mut pending[b.0], up.len(), |g| {
                        for (x, u) in g.iter_mut().zip(up) {
                            *x -= u;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    accumulate(&mut pending[a.0], up.len(), |g| {
                        for ((x, u), y) in g.iter_mut().zip(up).zip(db) {
                            *x += u * y;
                        }
                    });
                }
                if needs(*b) {
                    accumulate(&mut pending[b.0], up.len(), |g| {
                        for ((x, u), y) in g.iter_mut().zip(up).zip(da) {
                            *x += u * y;
                        }
                    });
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    accumulate(&mut pending[a.0], up.len(), |g| add_into(g, up));
                }
                if needs(*row) {
                    let n = numel(*row);
                    accumulate(&mut pending[row.0], n, |g| {
                        for chunk in up.chunks(n) {
                            add_into(g, chunk);
                        }
                    });
                }
            }
            Op::ScaleRows(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let n = ta.cols();
                if needs(*a) {
                    accumulate(&mut pending[a.0], up.len(), |g| {
                        for ((gr, ur), &s) in g.chunks_mut(n).zip(up.chunks(n)).zip(tc.data()) {
                            for (x, u) in gr.iter_mut().zip(ur) {
                                *x += u * s;
                            }
                        }
                    });
                }
                if needs(*col) {
                    accumulate(&mut pending[col.0], tc.numel(), |g| {
                        for ((x, ur), ar) in g.iter_mut().zip(up.chunks(n)).zip(ta.data().chunks(n))
                        {
                            *x += ur.iter().zip(ar).map(|(u, v)| u * v).sum::<f64>();
                        }
                    });
                }
            }
            Op::Affine(a, s) => {
                let s = *s;
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for (x, u) in g.iter_mut().zip(up) {
                        *x += s * u;
                    }
                });
            }
            Op::Sigmoid(a) => {
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for ((x, u), y) in g.iter_mut().zip(up).zip(out.data()) {
                        *x += u * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for ((x, u), y) in g.iter_mut().zip(up).zip(out.data()) {
                        *x += u * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(a) => {
                let inp = self.value(*a).data();
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for ((x, u), v) in g.iter_mut().zip(up).zip(inp) {
                        if *v > 0.0 {
                            *x += u;
                        }
                    }
                });
            }
            Op::Powf(a, p) => {
                let p = *p;
                let inp = self.value(*a).data();
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for ((x, u), v) in g.iter_mut().zip(up).zip(inp) {
                        if p != 0.0 && (*v > 0.0 || p >= 1.0) {
                            *x += u * p * v.powf(p - 1.0);
                        }
                    }
                });
            }
            Op::LnClamped(a, floor) => {
                let inp = self.value(*a).data();
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for ((x, u), v) in g.iter_mut().zip(up).zip(inp) {
                        if *v > *floor {
                            *x += u / v;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for ((gr, ur), yr) in
                        g.chunks_mut(n).zip(up.chunks(n)).zip(out.data().chunks(n))
                    {
                        let dot: f64 = ur.iter().zip(yr).map(|(u, y)| u * y).sum();
                        for ((x, u), y) in gr.iter_mut().zip(ur).zip(yr) {
                            *x += y * (u - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if needs(p) {
                        accumulate(&mut pending[p.0], numel(p), |g| {
                            for (gr, ur) in g.chunks_mut(w).zip(up.chunks(n)) {
                                add_into(gr, &ur[offset..offset + w]);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = numel(p);
                    if needs(p) {
                        accumulate(&mut pending[p.0], len, |g| {
                            add_into(g, &up[offset..offset + len])
                        });
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (w, n) = (out.cols(), self.value(*a).cols());
                let start = *start;
                accumulate(&mut pending[a.0], numel(*a), |g| {
                    for (gr, ur) in g.chunks_mut(n).zip(up.chunks(w)) {
                        add_into(&mut gr[start..start + w], ur);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let n = out.cols();
                let off = start * n;
                accumulate(&mut pending[a.0], numel(*a), |g| {
                    add_into(&mut g[off..off + up.len()], up)
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (out.rows(), out.cols());
                accumulate(&mut pending[a.0], up.len(), |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[j * m + i] += up[i * n + j];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let u = up[0];
                accumulate(&mut pending[a.0], numel(*a), |g| {
                    g.iter_mut().for_each(|x| *x += u)
                });
            }
            Op::Mean(a) => {
                let n = numel(*a);
                let u = up[0] / n as f64;
                accumulate(&mut pending[a.0], n, |g| g.iter_mut().for_each(|x| *x += u));
            }
            Op::RowSum(a) => {
                let n = self.value(*a).cols();
                accumulate(&mut pending[a.0], numel(*a), |g| {
                    for (gr, &u) in g.chunks_mut(n).zip(up) {
                        gr.iter_mut().for_each(|x| *x += u);
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

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

use std::sync::Arc;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<[usize]>, Vec<f64>),
    MeanRows(Var),
    Sum(Var),
    SquaredError(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations in execution order for reverse-mode differentiation.
///
/// A tape is built fresh for every forward pass. Every operation validates
/// shapes and rejects non-finite results.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not influence the output or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Gradient accumulator for `v`, created as zeros on first use.
fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_node(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteValue { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_node(value, op, needs_grad))
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize), AutodiffError> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(mismatch(op, format!("expected a matrix, got shape {:?}", t.shape())));
        }
        Ok(t.dims())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", format!("{m}x{k} times {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa == sb {
            let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
            return self.push("add", Tensor::from_parts(sa, data), Op::Add(a, b), &[a, b]);
        }
        let (m, n) = self.matrix("add", a)?;
        if sb != [1, n] {
            return Err(mismatch("add", format!("{sa:?} plus {sb:?}")));
        }
        let row = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|r| r.iter().zip(row).map(|(x, y)| x + y))
            .collect();
        self.push("add", Tensor::from_parts(vec![m, n], data), Op::AddRow(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch("sub", format!("{sa:?} minus {sb:?}")));
        }
        let shape = sa.to_vec();
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        self.push("sub", Tensor::from_parts(shape, data), Op::Sub(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| x * s).collect());
        self.push("scale", value, Op::Scale(a, s), &[a])
    }

    /// `max(x, 0)` elementwise; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| x.max(0.0)).collect());
        self.push("relu", value, Op::Relu(a), &[a])
    }

    /// Joins matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat", "no inputs".into()));
        };
        let rows = self.matrix("concat", first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix("concat", p)?;
            if r != rows {
                return Err(mismatch("concat", format!("{r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat", Tensor::from_parts(vec![rows, total], data), Op::Concat(parts.to_vec()), parts)
    }

    /// Output row `r` is input row `index[r]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let (m, n) = self.matrix("gather_rows", a)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(mismatch("gather_rows", format!("row {bad} of {m}")));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            data.extend_from_slice(t.row(i));
        }
        self.push("gather_rows", Tensor::from_parts(vec![index.len(), n], data), Op::GatherRows(a, index), &[a])
    }

    fn segment_totals(
        &self,
        op: &'static str,
        a: Var,
        segment: &[usize],
        n_segments: usize,
    ) -> Result<(Vec<f64>, Vec<usize>, usize), AutodiffError> {
        let (m, n) = self.matrix(op, a)?;
        if segment.len() != m {
            return Err(mismatch(op, format!("{} segment ids for {m} rows", segment.len())));
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= n_segments) {
            return Err(mismatch(op, format!("segment {bad} of {n_segments}")));
        }
        let t = self.value(a);
        let mut out = vec![0.0; n_segments * n];
        let mut counts = vec![0usize; n_segments];
        for (r, &s) in segment.iter().enumerate() {
            counts[s] += 1;
            for (o, x) in out[s * n..(s + 1) * n].iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        Ok((out, counts, n))
    }

    /// Output row `s` sums the input rows `r` with `segment[r] == s`; empty segments are zero.
    pub fn segment_sum(&mut self, a: Var, segment: Arc<[usize]>, n_segments: usize) -> Result<Var, AutodiffError> {
        let (out, _, n) = self.segment_totals("segment_sum", a, &segment, n_segments)?;
        self.push("segment_sum", Tensor::from_parts(vec![n_segments, n], out), Op::SegmentSum(a, segment), &[a])
    }

    /// Like [`Tape::segment_sum`] but averaging; empty segments are zero.
    pub fn segment_mean(&mut self, a: Var, segment: Arc<[usize]>, n_segments: usize) -> Result<Var, AutodiffError> {
        let (mut out, counts, n) = self.segment_totals("segment_mean", a, &segment, n_segments)?;
        let inv: Vec<f64> = counts.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
        for (s, w) in inv.iter().enumerate() {
            out[s * n..(s + 1) * n].iter_mut().for_each(|x| *x *= w);
        }
        self.push(
            "segment_mean",
            Tensor::from_parts(vec![n_segments, n], out),
            Op::SegmentMean(a, segment, inv),
            &[a],
        )
    }

    /// Column means as a `1 x cols` row; zero for a matrix without rows.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.matrix("mean_rows", a)?;
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(self.value(a).row(r)) {
                *o += x;
            }
        }
        if m > 0 {
            out.iter_mut().for_each(|x| *x /= m as f64);
        }
        self.push("mean_rows", Tensor::from_parts(vec![1, n], out), Op::MeanRows(a), &[a])
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch("squared_error", format!("{sa:?} vs {sb:?}")));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push("squared_error", Tensor::scalar(s), Op::SquaredError(a, b), &[a, b])
    }

    /// Adds several values of identical shape.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, AutodiffError> {
        let (&first, rest) = terms.split_first().ok_or_else(|| mismatch("add", "no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Smallest `|x|` over all ReLU pre-activations recorded so far (infinity if none).
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients, AutodiffError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(AutodiffError::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].needs_grad)
                    .map(|data| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), data))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims();
                let n = self.value(*b).dims().1;
                if needs(*a) {
                    gemm_nt(g, self.value(*b).data(), slot(grads, &self.nodes, *a), m, n, k);
                }
                if needs(*b) {
                    gemm_tn(self.value(*a).data(), g, slot(grads, &self.nodes, *b), m, k, n);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if needs(v) {
                        slot(grads, &self.nodes, v).iter_mut().zip(g).for_each(|(s, x)| *s += sign * x);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if needs(v) {
                        slot(grads, &self.nodes, v).iter_mut().zip(g).for_each(|(s, x)| *s += sign * x);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if needs(*a) {
                    slot(grads, &self.nodes, *a).iter_mut().zip(g).for_each(|(s, x)| *s += x);
                }
                if needs(*b) {
                    let n = value.dims().1;
                    let s = slot(grads, &self.nodes, *b);
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    slot(grads, &self.nodes, *a).iter_mut().zip(g).for_each(|(s, x)| *s += c * x);
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let input = self.value(*a).data();
                    slot(grads, &self.nodes, *a)
                        .iter_mut()
                        .zip(g)
                        .zip(input)
                        .for_each(|((s, x), &pre)| {
                            if pre > 0.0 {
                                *s += x
                            }
                        });
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = value.dims();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims().1;
                    if needs(p) {
                        let s = slot(grads, &self.nodes, p);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            s[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(s, x)| *s += x);
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows(a, index) => {
                if needs(*a) {
                    let n = value.dims().1;
                    let s = slot(grads, &self.nodes, *a);
                    for (r, &i) in index.iter().enumerate() {
                        s[i * n..(i + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(s, x)| *s += x);
                    }
                }
            }
            Op::SegmentSum(a, segment) => {
                if needs(*a) {
                    let n = value.dims().1;
                    let s = slot(grads, &self.nodes, *a);
                    for (r, &seg) in segment.iter().enumerate() {
                        s[r * n..(r + 1) * n].iter_mut().zip(&g[seg * n..(seg + 1) * n]).for_each(|(s, x)| *s += x);
                    }
                }
            }
            Op::SegmentMean(a, segment, inv) => {
                if needs(*a) {
                    let n = value.dims().1;
                    let s = slot(grads, &self.nodes, *a);
                    for (r, &seg) in segment.iter().enumerate() {
                        let w = inv[seg];
                        s[r * n..(r + 1) * n]
                            .iter_mut()
                            .zip(&g[seg * n..(seg + 1) * n])
                            .for_each(|(s, x)| *s += w * x);
                    }
                }
            }
            Op::MeanRows(a) => {
                if needs(*a) {
                    let (m, n) = self.value(*a).dims();
                    let w = 1.0 / m.max(1) as f64;
                    let s = slot(grads, &self.nodes, *a);
                    for row in s.chunks_mut(n.max(1)) {
                        row.iter_mut().zip(g).for_each(|(s, x)| *s += w * x);
                    }
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    slot(grads, &self.nodes, *a).iter_mut().for_each(|s| *s += g[0]);
                }
            }
            Op::SquaredError(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                for (v, sign) in [(*a, 2.0), (*b, -2.0)] {
                    if needs(v) {
                        slot(grads, &self.nodes, v)
                            .iter_mut()
                            .zip(da.iter().zip(db))
                            .for_each(|(s, (x, y))| *s += sign * g[0] * (x - y));
                    }
                }
            }
        }
    }
}

//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node whose
//! parents always precede it, so a single reverse sweep computes all
//! gradients. Spiking layers plug in through [`CustomBackward`]: the caller
//! computes the (possibly non-differentiable) forward value and supplies the
//! pseudo-derivative rule used on the way back.

use std::collections::{BTreeMap, HashMap};

use super::tensor::{matmul, matmul_a_bt_acc, matmul_at_b_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation whose forward value is computed outside the tape.
pub trait CustomBackward {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input. Entries whose `needs` flag is
    /// false may be `None`.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Sum(Var),
    MeanAxis(Var, usize),
    MaxAxis(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, usize),
    SegmentMax(Var, Vec<usize>),
    BlockMean(Var, usize),
    Tile(Var, usize),
    Custom(Vec<Var>, Box<dyn CustomBackward>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A named trainable leaf. Registering the same name twice returns the
    /// existing node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::shape("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let c = sx[1];
        let mut data = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let t = Tensor::from_parts(sx.to_vec(), data);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    /// `x · w + b` for a row-batch `x` and weight stored as `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let t = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect());
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let t = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect());
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let t = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * v).collect());
        let rg = self.rg(x);
        self.push(t, Op::Square(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    fn axis_dims(&self, op: &'static str, x: Var, axis: usize) -> Result<(usize, usize)> {
        let s = self.value(x).shape();
        match (s.len(), axis) {
            (1, 0) => Ok((s[0], 1)),
            (2, 0 | 1) => Ok((s[0], s[1])),
            _ => Err(Error::shape(op, format!("axis {axis} of {s:?}"))),
        }
    }

    /// Mean over `axis` of a rank-1 or rank-2 tensor; the axis is dropped.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.axis_dims("mean_axis", x, axis)?;
        let d = self.value(x).data();
        let out = if axis == 0 {
            let mut o = vec![0.0; c];
            for row in d.chunks(c) {
                for (a, b) in o.iter_mut().zip(row) {
                    *a += b;
                }
            }
            o.iter_mut().for_each(|v| *v /= r as f64);
            o
        } else {
            d.chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect()
        };
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::MeanAxis(x, axis), rg))
    }

    /// Max over `axis`; ties resolve to the first occurrence.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.axis_dims("max_axis", x, axis)?;
        let d = self.value(x).data();
        let (out, arg): (Vec<f64>, Vec<usize>) = if axis == 0 {
            (0..c)
                .map(|j| {
                    let mut best = j;
                    for i in 1..r {
                        if d[i * c + j] > d[best] {
                            best = i * c + j;
                        }
                    }
                    (d[best], best)
                })
                .unzip()
        } else {
            (0..r)
                .map(|i| {
                    let mut best = i * c;
                    for j in 1..c {
                        if d[i * c + j] > d[best] {
                            best = i * c + j;
                        }
                    }
                    (d[best], best)
                })
                .unzip()
        };
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::MaxAxis(x, arg), rg))
    }

    /// Concatenation along axis 0 (any rank, matching trailing dims) or
    /// axis 1 (rank 2, matching row counts).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let t = match axis {
            0 => {
                let trailing = &first[1..];
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let s = self.value(p).shape();
                    if &s[1..] != trailing {
                        return Err(Error::shape("concat", format!("{first:?} vs {s:?} on axis 0")));
                    }
                    rows += s[0];
                    data.extend_from_slice(self.value(p).data());
                }
                let mut shape = first.clone();
                shape[0] = rows;
                Tensor::from_parts(shape, data)
            }
            1 => {
                let rows = first[0];
                let mut widths = Vec::with_capacity(parts.len());
                for &p in parts {
                    let s = self.value(p).shape();
                    if s.len() != 2 || s[0] != rows || first.len() != 2 {
                        return Err(Error::shape("concat", format!("{first:?} vs {s:?} on axis 1")));
                    }
                    widths.push(s[1]);
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (&p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
                    }
                }
                Tensor::from_parts(vec![rows, total], data)
            }
            _ => return Err(Error::shape("concat", format!("unsupported axis {axis}"))),
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Rows `start..end` of a tensor (leading axis).
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if start >= end || end > s[0] {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {s:?}")));
        }
        let c = self.value(x).cols();
        let data = self.value(x).data()[start * c..end * c].to_vec();
        let mut shape = s;
        shape[0] = end - start;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::SliceRows(x, start), rg))
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {s:?}")));
        }
        let c = self.value(x).cols();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let mut shape = s;
        shape[0] = idx.len();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::GatherRows(x, idx.to_vec()), rg))
    }

    fn segment_dims(&self, op: &'static str, x: Var, k: usize) -> Result<(usize, usize)> {
        let t = self.value(x);
        if t.rank() != 2 || k == 0 || !t.rows().is_multiple_of(k) {
            return Err(Error::shape(op, format!("groups of {k} rows in {:?}", t.shape())));
        }
        Ok((t.rows() / k, t.cols()))
    }

    /// Mean over consecutive groups of `k` rows.
    pub fn segment_mean(&mut self, x: Var, k: usize) -> Result<Var> {
        let (g, c) = self.segment_dims("segment_mean", x, k)?;
        let d = self.value(x).data();
        let mut out = vec![0.0; g * c];
        for (gi, orow) in out.chunks_mut(c).enumerate() {
            for r in 0..k {
                let row = &d[(gi * k + r) * c..(gi * k + r + 1) * c];
                for (o, v) in orow.iter_mut().zip(row) {
                    *o += v;
                }
            }
            orow.iter_mut().for_each(|v| *v /= k as f64);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![g, c], out), Op::SegmentMean(x, k), rg))
    }

    /// Max over consecutive groups of `k` rows; ties resolve to the first row.
    pub fn segment_max(&mut self, x: Var, k: usize) -> Result<Var> {
        let (g, c) = self.segment_dims("segment_max", x, k)?;
        let d = self.value(x).data();
        let mut out = vec![0.0; g * c];
        let mut arg = vec![0usize; g * c];
        for gi in 0..g {
            for j in 0..c {
                let mut best = gi * k * c + j;
                for r in 1..k {
                    let idx = (gi * k + r) * c + j;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out[gi * c + j] = d[best];
                arg[gi * c + j] = best;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![g, c], out), Op::SegmentMax(x, arg), rg))
    }

    /// Splits the rows into `blocks` contiguous equal blocks and averages them.
    /// With time-major row layout this is the temporal mean.
    pub fn block_mean(&mut self, x: Var, blocks: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || blocks == 0 || !t.rows().is_multiple_of(blocks) {
            return Err(Error::shape("block_mean", format!("{blocks} blocks of {:?}", t.shape())));
        }
        let (n, c) = (t.rows() / blocks, t.cols());
        let d = t.data();
        let mut out = vec![0.0; n * c];
        for b in 0..blocks {
            for (o, v) in out.iter_mut().zip(&d[b * n * c..(b + 1) * n * c]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= blocks as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::BlockMean(x, blocks), rg))
    }

    /// Stacks `times` copies of a matrix along the rows.
    pub fn tile(&mut self, x: Var, times: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || times == 0 {
            return Err(Error::shape("tile", format!("{times} copies of {:?}", t.shape())));
        }
        let data = t.data().repeat(times);
        let shape = vec![t.rows() * times, t.cols()];
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Tile(x, times), rg))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn CustomBackward>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, Op::Custom(inputs.to_vec(), rule), rg)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::Contract(format!("backward root must be scalar, got shape {:?}", rv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(rv.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let params = self
            .params
            .iter()
            .map(|(name, &v)| {
                let g = grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let value = &self.nodes[id].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(self.value(v).shape().to_vec(), data);

        match &self.nodes[id].op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_a_bt_acc(&mut ga, g.data(), tb.data(), m, k, n);
                    acc(*a, like(*a, ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    matmul_at_b_acc(&mut gb, ta.data(), g.data(), m, k, n);
                    acc(*b, like(*b, gb));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                acc(*a, like(*a, ga));
                acc(*b, like(*b, gb));
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                if self.rg(*b) {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(*b, like(*b, gb));
                }
            }
            Op::Scale(x, c) => acc(*x, like(*x, g.data().iter().map(|v| v * c).collect())),
            Op::Relu(x) => {
                let d = self.value(*x).data();
                let gx = g.data().iter().zip(d).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                acc(*x, like(*x, gx));
            }
            Op::Square(x) => {
                let d = self.value(*x).data();
                acc(*x, like(*x, g.data().iter().zip(d).map(|(gv, xv)| 2.0 * xv * gv).collect()));
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                acc(*x, Tensor::filled(self.value(*x).shape(), gv));
            }
            Op::MeanAxis(x, axis) => {
                let t = self.value(*x);
                let (r, c) = if t.rank() == 1 { (t.len(), 1) } else { (t.shape()[0], t.shape()[1]) };
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = if *axis == 0 { g.data()[j] / r as f64 } else { g.data()[i] / c as f64 };
                    }
                }
                acc(*x, like(*x, gx));
            }
            Op::MaxAxis(x, arg) | Op::SegmentMax(x, arg) => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (o, &src) in arg.iter().enumerate() {
                    gx[src] += g.data()[o];
                }
                acc(*x, like(*x, gx));
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc(p, like(p, g.data()[off..off + n].to_vec()));
                        off += n;
                    }
                } else {
                    let total = g.cols();
                    let mut off = 0;
                    for &p in parts {
                        let (r, w) = (self.value(p).rows(), self.value(p).cols());
                        if self.rg(p) {
                            let mut gp = Vec::with_capacity(r * w);
                            for i in 0..r {
                                gp.extend_from_slice(&g.data()[i * total + off..i * total + off + w]);
                            }
                            acc(p, like(p, gp));
                        }
                        off += w;
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let c = self.value(*x).cols();
                let mut gx = vec![0.0; self.value(*x).len()];
                gx[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*x, like(*x, gx));
            }
            Op::GatherRows(x, idx) => {
                let c = self.value(*x).cols();
                let mut gx = vec![0.0; self.value(*x).len()];
                for (o, &i) in idx.iter().enumerate() {
                    for (dst, src) in gx[i * c..(i + 1) * c].iter_mut().zip(&g.data()[o * c..(o + 1) * c]) {
                        *dst += src;
                    }
                }
                acc(*x, like(*x, gx));
            }
            Op::SegmentMean(x, k) => {
                let c = g.cols();
                let mut gx = Vec::with_capacity(self.value(*x).len());
                for grow in g.data().chunks(c) {
                    for _ in 0..*k {
                        gx.extend(grow.iter().map(|v| v / *k as f64));
                    }
                }
                acc(*x, like(*x, gx));
            }
            Op::BlockMean(x, blocks) => {
                let scaled: Vec<f64> = g.data().iter().map(|v| v / *blocks as f64).collect();
                acc(*x, like(*x, scaled.repeat(*blocks)));
            }
            Op::Tile(x, times) => {
                let n = self.value(*x).len();
                let mut gx = vec![0.0; n];
                for chunk in g.data().chunks(n).take(*times) {
                    for (o, v) in gx.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                acc(*x, like(*x, gx));
            }
            Op::Custom(inputs, rule) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.rg(v)).collect();
                let out = rule.backward(&ins, value, g, &needs);
                for ((&v, need), gi) in inputs.iter().zip(&needs).zip(out) {
                    if let (true, Some(t)) = (need, gi) {
                        acc(v, t);
                    }
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient with respect to any node, if one flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a named parameter; zero when the root does not depend on it.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

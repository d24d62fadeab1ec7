//! Tensor tape with reverse-mode backward rules.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation evaluates
//! eagerly, appends a node, and returns its [`NodeId`]; [`Graph::backward`]
//! walks the nodes in reverse insertion order, which is a topological order
//! by construction.

use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    /// Gradients with respect to each input, given the output gradient.
    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize),
    Transpose(usize),
    Relu(usize),
    LayerNorm(usize, Vec<f64>),
    Softmax(usize, usize),
    MaskedFill(usize, Arc<[bool]>),
    Sum(usize),
    Mean(usize),
    Sqrt(usize),
    Square(usize),
    BroadcastRows(usize),
    Custom(Vec<usize>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, zeros when the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

fn acc(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Input or parameter.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            av.data(),
            (k as isize, 1),
            bv.data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        }
        let t = zip(av, bv, |x, y| x + y);
        Ok(self.push(t, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::shape("sub", av.shape(), bv.shape()));
        }
        let t = zip(av, bv, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::shape("mul", av.shape(), bv.shape()));
        }
        let t = zip(av, bv, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a.0, b.0)))
    }

    /// `a[m, n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (m, n) = av.dims2()?;
        if bv.shape() != [n] {
            return Err(Error::shape("add_row", av.shape(), bv.shape()));
        }
        let mut out = av.data().to_vec();
        for r in 0..m {
            for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::AddRow(a.0, bias.0)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = map(self.value(a), |v| v * c);
        self.push(t, Op::Scale(a.0, c))
    }

    /// Concatenate rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape("concat", &[parts.len()], &[axis]));
        }
        let first = self.value(parts[0]).dims2()?;
        let mut dims = Vec::with_capacity(parts.len());
        for p in parts {
            let d = self.value(*p).dims2()?;
            let ok = if axis == 0 { d.1 == first.1 } else { d.0 == first.0 };
            if !ok {
                return Err(Error::shape(
                    "concat",
                    self.value(parts[0]).shape(),
                    self.value(*p).shape(),
                ));
            }
            dims.push(d);
        }
        let t = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * first.1);
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
            Tensor::matrix(rows, first.1, data)?
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(first.0 * cols);
            for r in 0..first.0 {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(r));
                }
            }
            Tensor::matrix(first.0, cols, data)?
        };
        Ok(self.push(t, Op::Concat(parts.iter().map(|p| p.0).collect(), axis)))
    }

    /// Rows or columns `range` of a rank-2 tensor.
    pub fn slice(&mut self, a: NodeId, axis: usize, range: std::ops::Range<usize>) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2()?;
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || range.start > range.end || range.end > extent {
            return Err(Error::shape("slice", av.shape(), &[range.start, range.end]));
        }
        let t = if axis == 0 {
            Tensor::matrix(
                range.len(),
                n,
                av.data()[range.start * n..range.end * n].to_vec(),
            )?
        } else {
            let mut data = Vec::with_capacity(m * range.len());
            for r in 0..m {
                data.extend_from_slice(&av.row(r)[range.clone()]);
            }
            Tensor::matrix(m, range.len(), data)?
        };
        Ok(self.push(t, Op::Slice(a.0, axis, range.start)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2()?;
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                data[c * m + r] = av.data()[r * n + c];
            }
        }
        let t = Tensor::matrix(n, m, data)?;
        Ok(self.push(t, Op::Transpose(a.0)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), |v| v.max(0.0));
        self.push(t, Op::Relu(a.0))
    }

    /// Per-row normalization to zero mean and unit variance, no affine terms.
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2()?;
        let mut data = av.data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = &mut data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let t = Tensor::matrix(m, n, data)?;
        Ok(self.push(t, Op::LayerNorm(a.0, inv_std)))
    }

    /// Softmax of a rank-2 tensor along `axis`. Entries equal to −∞ get
    /// zero weight.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2()?;
        if axis > 1 {
            return Err(Error::shape("softmax", av.shape(), &[axis]));
        }
        let mut data = av.data().to_vec();
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
        for o in 0..outer {
            let idx = |i: usize| o * stride_o + i * stride_i;
            let max = (0..inner).fold(f64::NEG_INFINITY, |mx, i| mx.max(data[idx(i)]));
            let mut total = 0.0;
            for i in 0..inner {
                let e = (data[idx(i)] - max).exp();
                data[idx(i)] = e;
                total += e;
            }
            for i in 0..inner {
                data[idx(i)] /= total;
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        Ok(self.push(t, Op::Softmax(a.0, axis)))
    }

    /// Replace entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, a: NodeId, mask: Arc<[bool]>, fill: f64) -> Result<NodeId> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(Error::shape("masked_fill", av.shape(), &[mask.len()]));
        }
        let data = av
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push(t, Op::MaskedFill(a.0, mask)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a.0))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), f64::sqrt);
        self.push(t, Op::Sqrt(a.0))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), |v| v * v);
        self.push(t, Op::Square(a.0))
    }

    /// Repeat a vector `[n]` (or `[1, n]`) as `rows` identical rows.
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        let av = self.value(a);
        let n = match av.shape() {
            [n] | [1, n] => *n,
            s => return Err(Error::shape("broadcast_rows", s, &[rows])),
        };
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(av.data());
        }
        let t = Tensor::matrix(rows, n, data)?;
        Ok(self.push(t, Op::BroadcastRows(a.0)))
    }

    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        self.push(value, Op::Custom(inputs.iter().map(|i| i.0).collect(), op))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.rank() > 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |j: usize| &self.nodes[j].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2()?;
                    let n = val(*b).dims2()?.1;
                    let mut ga = vec![0.0; m * k];
                    // dA = G · Bᵀ
                    gemm(m, n, k, g.data(), (n as isize, 1), val(*b).data(), (1, n as isize), &mut ga, false);
                    let mut gb = vec![0.0; k * n];
                    // dB = Aᵀ · G
                    gemm(k, m, n, val(*a).data(), (1, k as isize), g.data(), (n as isize, 1), &mut gb, false);
                    acc(&mut grads, *a, Tensor::matrix(m, k, ga)?);
                    acc(&mut grads, *b, Tensor::matrix(k, n, gb)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, map(&g, |v| -v));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, zip(&g, val(*b), |x, y| x * y));
                    acc(&mut grads, *b, zip(&g, val(*a), |x, y| x * y));
                }
                Op::AddRow(a, b) => {
                    let (m, n) = g.dims2()?;
                    let mut gb = vec![0.0; n];
                    for r in 0..m {
                        for (o, v) in gb.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *b, Tensor::vector(gb));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => acc(&mut grads, *a, map(&g, |v| v * c)),
                Op::Concat(parts, axis) => {
                    let (m, _) = g.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let (pm, pn) = val(p).dims2()?;
                        let data = if *axis == 0 {
                            g.data()[offset * pn..(offset + pm) * pn].to_vec()
                        } else {
                            let mut d = Vec::with_capacity(m * pn);
                            for r in 0..m {
                                d.extend_from_slice(&g.row(r)[offset..offset + pn]);
                            }
                            d
                        };
                        offset += if *axis == 0 { pm } else { pn };
                        acc(&mut grads, p, Tensor::matrix(pm, pn, data)?);
                    }
                }
                Op::Slice(a, axis, start) => {
                    let (m, n) = val(*a).dims2()?;
                    let (gm, gn) = g.dims2()?;
                    let mut data = vec![0.0; m * n];
                    for r in 0..gm {
                        for c in 0..gn {
                            let (rr, cc) = if *axis == 0 { (r + start, c) } else { (r, c + start) };
                            data[rr * n + cc] = g.data()[r * gn + c];
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, n, data)?);
                }
                Op::Transpose(a) => {
                    let (m, n) = g.dims2()?;
                    let mut data = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            data[c * m + r] = g.data()[r * n + c];
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(n, m, data)?);
                }
                Op::Relu(a) => acc(&mut grads, *a, zip(&g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
                Op::LayerNorm(a, inv_std) => {
                    let y = &node.value;
                    let (m, n) = y.dims2()?;
                    let mut data = vec![0.0; m * n];
                    for r in 0..m {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mg = gr.iter().sum::<f64>() / n as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for c in 0..n {
                            data[r * n + c] = inv_std[r] * (gr[c] - mg - yr[c] * mgy);
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, n, data)?);
                }
                Op::Softmax(a, axis) => {
                    let y = &node.value;
                    let (m, n) = y.dims2()?;
                    let mut data = vec![0.0; m * n];
                    let (outer, inner, so, si) = if *axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
                    for o in 0..outer {
                        let dot: f64 = (0..inner)
                            .map(|i| g.data()[o * so + i * si] * y.data()[o * so + i * si])
                            .sum();
                        for i in 0..inner {
                            let k = o * so + i * si;
                            data[k] = y.data()[k] * (g.data()[k] - dot);
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, n, data)?);
                }
                Op::MaskedFill(a, mask) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(mask.iter())
                        .map(|(&v, &m)| if m { 0.0 } else { v })
                        .collect();
                    acc(&mut grads, *a, Tensor::new(g.shape(), data)?);
                }
                Op::Sum(a) => acc(&mut grads, *a, Tensor::filled(val(*a).shape(), g.item())),
                Op::Mean(a) => {
                    let n = val(*a).len() as f64;
                    acc(&mut grads, *a, Tensor::filled(val(*a).shape(), g.item() / n))
                }
                Op::Sqrt(a) => acc(
                    &mut grads,
                    *a,
                    zip(&g, &node.value, |gv, s| if s > 0.0 { gv * 0.5 / s } else { 0.0 }),
                ),
                Op::Square(a) => acc(&mut grads, *a, zip(&g, val(*a), |gv, x| 2.0 * gv * x)),
                Op::BroadcastRows(a) => {
                    let (m, n) = g.dims2()?;
                    let mut data = vec![0.0; n];
                    for r in 0..m {
                        for (o, v) in data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(val(*a).shape(), data)?);
                }
                Op::Custom(inputs, op) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|&j| val(j)).collect();
                    let gs = op.backward(&ins, &g);
                    for (&j, gj) in inputs.iter().zip(gs) {
                        if !gj.same_shape(val(j)) {
                            return Err(Error::shape(op.name(), gj.shape(), val(j).shape()));
                        }
                        acc(&mut grads, j, gj);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

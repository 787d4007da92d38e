//! Append-only computation tape with a reverse sweep.
//!
//! Every node caches its forward value. Inputs of a node always have smaller
//! ids, so the backward pass is a single walk over the tape in reverse.
//! Row-wise ops treat the last dimension as columns and everything before it
//! as rows, so a rank-1 tensor is a single row.

use crate::error::{AutodiffError, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    RowNorm(NodeId),
    RowNormalize(NodeId),
    RowDot(NodeId, NodeId),
    LogSumExpRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn row_shape(t: &Tensor) -> Vec<usize> {
    if t.rank() == 1 {
        vec![1]
    } else {
        t.shape()[..t.rank() - 1].to_vec()
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = as_matrix(av);
        if bv.rank() != 2 || bv.shape()[0] != k {
            return Err(AutodiffError::Shape(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let m = bv.shape()[1];
        let out = Tensor::matrix(n, m, matmul(av.data(), bv.data(), n, k, m));
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a b^T`: pairwise row dot products, `[n, m] x [k, m] -> [n, k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, m) = as_matrix(av);
        let (k, m2) = as_matrix(bv);
        if m != m2 {
            return Err(AutodiffError::Shape(format!(
                "matmul_nt {:?} x {:?}^T",
                av.shape(),
                bv.shape()
            )));
        }
        let out = Tensor::matrix(n, k, matmul_nt(av.data(), bv.data(), n, m, k));
        Ok(self.push(Op::MatMulNt(a, b), out))
    }

    /// Adds a length-`m` bias to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let m = av.cols();
        if bv.len() != m {
            return Err(AutodiffError::Shape(format!(
                "bias of length {} for rows of width {m}",
                bv.len()
            )));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(Op::AddBias(a, b), out))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AutodiffError::Shape(format!(
                "{what}: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).scale(c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), out)
    }

    /// Concatenates along the last dimension. All parts need the same row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Shape("concat of zero tensors".into()));
        };
        let rows = self.value(first).rows();
        let mut width = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(AutodiffError::Shape(format!(
                    "concat rows {} vs {rows}",
                    v.rows()
                )));
            }
            width += v.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, width, data);
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    /// Columns `[start, end)` of every row.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = as_matrix(av);
        if start >= end || end > cols {
            return Err(AutodiffError::Shape(format!(
                "column slice {start}..{end} of width {cols}"
            )));
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let out = Tensor::matrix(rows, end - start, data);
        Ok(self.push(Op::SliceCols(a, start, end), out))
    }

    /// Rows `[start, end)` of a matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = as_matrix(av);
        if start >= end || end > rows {
            return Err(AutodiffError::Shape(format!(
                "row slice {start}..{end} of {rows} rows"
            )));
        }
        let out = Tensor::matrix(
            end - start,
            cols,
            av.data()[start * cols..end * cols].to_vec(),
        );
        Ok(self.push(Op::SliceRows(a, start, end), out))
    }

    /// Euclidean norm of every row. The subgradient at a zero row is 0.
    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data: Vec<f64> = (0..av.rows())
            .map(|r| av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::new(row_shape(av), data).expect("row shape");
        self.push(Op::RowNorm(a), out)
    }

    /// Scales every row to unit length. Zero rows stay zero.
    pub fn row_normalize(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let m = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(m) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        self.push(Op::RowNormalize(a), out)
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "row_dot")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<f64> = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let out = Tensor::new(row_shape(av), data).expect("row shape");
        Ok(self.push(Op::RowDot(a, b), out))
    }

    /// Numerically stable `log(sum(exp(row)))` per row.
    pub fn log_sum_exp_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data: Vec<f64> = (0..av.rows()).map(|r| log_sum_exp(av.row(r))).collect();
        let out = Tensor::new(row_shape(av), data).expect("row shape");
        self.push(Op::LogSumExpRows(a), out)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(Op::Mean(a), out)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                node: loss.0,
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0]).expect("scalar"));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => grads[id] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k) = as_matrix(av);
                    let m = bv.cols();
                    let da = matmul_nt(g.data(), bv.data(), n, m, k);
                    let db = matmul_tn(av.data(), g.data(), n, k, m);
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, m) = as_matrix(av);
                    let k = bv.rows();
                    let da = matmul(g.data(), bv.data(), n, k, m);
                    let db = matmul_tn(g.data(), av.data(), n, k, m);
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::AddBias(a, b) => {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let bshape = self.value(*b).shape().to_vec();
                    accumulate(&mut grads, *b, &bshape, db);
                    accumulate_tensor(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate_tensor(&mut grads, *b, g.clone());
                    accumulate_tensor(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate_tensor(&mut grads, *b, g.scale(-1.0));
                    accumulate_tensor(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y);
                    let db = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate_tensor(&mut grads, *a, da);
                    accumulate_tensor(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accumulate_tensor(&mut grads, *a, g.scale(*c)),
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |d, y| d * (1.0 - y * y));
                    accumulate_tensor(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 });
                    accumulate_tensor(&mut grads, *a, da);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        let shape = pv.shape().to_vec();
                        accumulate(&mut grads, p, &shape, dp);
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let av = self.value(*a);
                    let (rows, cols) = as_matrix(av);
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        da[r * cols + start..r * cols + end].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                }
                Op::SliceRows(a, start, end) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let mut da = vec![0.0; av.len()];
                    da[start * cols..end * cols].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, av.shape(), da);
                }
                Op::RowNorm(a) => {
                    let av = self.value(*a);
                    let m = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for r in 0..av.rows() {
                        let n = node.value.data()[r];
                        if n > 0.0 {
                            let s = g.data()[r] / n;
                            for (d, x) in da[r * m..(r + 1) * m].iter_mut().zip(av.row(r)) {
                                *d = s * x;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                }
                Op::RowNormalize(a) => {
                    let av = self.value(*a);
                    let m = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for r in 0..av.rows() {
                        let n = av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let u = node.value.row(r);
                        let du = g.row(r);
                        let proj: f64 = u.iter().zip(du).map(|(x, y)| x * y).sum();
                        for j in 0..m {
                            da[r * m + j] = (du[j] - u[j] * proj) / n;
                        }
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let m = av.cols();
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; bv.len()];
                    for r in 0..av.rows() {
                        let s = g.data()[r];
                        for j in 0..m {
                            da[r * m + j] = s * bv.data()[r * m + j];
                            db[r * m + j] = s * av.data()[r * m + j];
                        }
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::LogSumExpRows(a) => {
                    let av = self.value(*a);
                    let m = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for r in 0..av.rows() {
                        let lse = node.value.data()[r];
                        let s = g.data()[r];
                        for (d, x) in da[r * m..(r + 1) * m].iter_mut().zip(av.row(r)) {
                            *d = s * (x - lse).exp();
                        }
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let da = vec![g.item(); av.len()];
                    accumulate(&mut grads, *a, av.shape(), da);
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let da = vec![g.item() / av.len() as f64; av.len()];
                    accumulate(&mut grads, *a, av.shape(), da);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], data: Vec<f64>) {
    let t = Tensor::new(shape.to_vec(), data).expect("gradient shape matches value");
    accumulate_tensor(grads, id, t);
}

fn accumulate_tensor(grads: &mut [Option<Tensor>], id: NodeId, t: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&t),
        slot => *slot = Some(t),
    }
}

/// Gradients of one scalar w.r.t. the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `id`, or `None` when the loss does not depend on it.
    pub fn try_get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, with zeros of `like`'s shape for unreachable nodes.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.try_get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

//! Tape of dense-matrix operations with reverse-mode differentiation.
//!
//! Every forward primitive appends one node holding its output value and
//! whatever it needs for the backward pass. Nodes are only ever appended, so
//! the node order is a topological order and [`Graph::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: Tensor2,
        inv_std: Vec<f64>,
    },
    Relu(NodeId),
    Transpose(NodeId),
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    SelectRow { x: NodeId, row: usize },
    MeanRows(NodeId),
    Sum(NodeId),
    MeanSquaredError(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor2,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient of one scalar node with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&Tensor2> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, zero-filled when the node is disconnected from the loss.
    pub fn wrt(&self, id: NodeId) -> Tensor2 {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor2::zeros(r, c)
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

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    /// Smallest `|x|` over every input of every ReLU on the tape, i.e. how far
    /// the recorded forward pass is from the nearest kink. `None` without ReLUs.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a)),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|x| x.abs()))
            .reduce(f64::min)
    }

    fn push(&mut self, op: Op, value: Tensor2) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a leaf (input or trainable parameter).
    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "add")?;
        let mut v = va.clone();
        v.add_assign(vb);
        Ok(self.push(Op::Add(a, b), v))
    }

    /// Adds the 1×C row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut v = va.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        Ok(self.push(Op::AddRow(a, bias), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "sub")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let v = Tensor2::new(va.rows(), va.cols(), data)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Row-wise normalisation to zero mean / unit variance followed by the
    /// affine map `gain * x + bias` (both 1×C).
    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let c = vx.cols();
        if vg.shape() != (1, c) || vb.shape() != (1, c) {
            return Err(Error::shape(
                "layer_norm_rows",
                format!("x {:?}, gain {:?}, bias {:?}", vx.shape(), vg.shape(), vb.shape()),
            ));
        }
        let mut normalized = vx.clone();
        let mut inv_std = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let row = normalized.row_mut(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv_std.push(s);
        }
        let mut out = normalized.clone();
        for r in 0..out.rows() {
            for ((o, g), b) in out.row_mut(r).iter_mut().zip(vg.data()).zip(vb.data()) {
                *o = *o * g + b;
            }
        }
        Ok(self.push(
            Op::LayerNormRows {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            out,
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Columns `start..start + width` of `x`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if width == 0 || start + width > vx.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + width, vx.shape()),
            ));
        }
        let mut data = Vec::with_capacity(vx.rows() * width);
        for r in 0..vx.rows() {
            data.extend_from_slice(&vx.row(r)[start..start + width]);
        }
        let v = Tensor2::new(vx.rows(), width, data)?;
        Ok(self.push(Op::SliceCols { x, start }, v))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let v = Tensor2::new(rows, cols, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn select_row(&mut self, x: NodeId, row: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if row >= vx.rows() {
            return Err(Error::shape(
                "select_row",
                format!("row {row} of {:?}", vx.shape()),
            ));
        }
        let v = Tensor2::row_vector(vx.row(row).to_vec())?;
        Ok(self.push(Op::SelectRow { x, row }, v))
    }

    /// Column-wise mean over rows, giving a 1×C row.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let n = vx.rows() as f64;
        let data = (0..vx.cols())
            .map(|c| (0..vx.rows()).map(|r| vx.get(r, c)).sum::<f64>() / n)
            .collect();
        let v = Tensor2::new(1, vx.cols(), data).expect("non-empty");
        self.push(Op::MeanRows(x), v)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor2::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    /// Mean of squared entry differences, a 1×1 node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "mse")?;
        let total: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let v = Tensor2::scalar(total / va.len() as f64);
        Ok(self.push(Op::MeanSquaredError(a, b), v))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, g.map(|v| v * f));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((out, gy), yv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *out = yv * (gy - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNormRows {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let vg = self.value(*gain);
                    let c = normalized.cols();
                    let n = c as f64;
                    let mut g_gain = Tensor2::zeros(1, c);
                    let mut g_bias = Tensor2::zeros(1, c);
                    let mut gx = Tensor2::zeros(normalized.rows(), c);
                    for r in 0..normalized.rows() {
                        let gy = g.row(r);
                        let xh = normalized.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..c {
                            g_gain.data_mut()[j] += gy[j] * xh[j];
                            g_bias.data_mut()[j] += gy[j];
                            let d = gy[j] * vg.data()[j];
                            sum_d += d;
                            sum_dx += d * xh[j];
                        }
                        let s = inv_std[r];
                        let out = gx.row_mut(r);
                        for j in 0..c {
                            let d = gy[j] * vg.data()[j];
                            out[j] = s / n * (n * d - sum_d - xh[j] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, g_gain);
                    accumulate(&mut grads, *bias, g_bias);
                }
                Op::Relu(a) => {
                    let va = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor2::new(g.rows(), g.cols(), data)?);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose());
                }
                Op::SliceCols { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Tensor2::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        let mut gp = Tensor2::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::SelectRow { x, row } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Tensor2::zeros(rows, cols);
                    gx.row_mut(*row).copy_from_slice(g.data());
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Tensor2::zeros(rows, cols);
                    for r in 0..rows {
                        for (o, v) in gx.row_mut(r).iter_mut().zip(g.data()) {
                            *o = v / rows as f64;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor2::filled(rows, cols, g.data()[0]));
                }
                Op::MeanSquaredError(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let k = 2.0 * g.data()[0] / va.len() as f64;
                    let data: Vec<f64> =
                        va.data().iter().zip(vb.data()).map(|(x, y)| k * (x - y)).collect();
                    let ga = Tensor2::new(va.rows(), va.cols(), data)?;
                    accumulate(&mut grads, *b, ga.map(|v| -v));
                    accumulate(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: NodeId, g: Tensor2) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

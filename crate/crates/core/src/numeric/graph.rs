//! Reverse-mode differentiation over a fixed operation set.
//!
//! Nodes are appended to a tape in creation order, so the tape is already a
//! topological order and `backward` makes a single reverse pass. Gradients are
//! reset at the start of every `backward` call and then accumulated.

use super::ops::{self, LayerNormCache};
use super::{Matrix, NumericError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    LayerNorm { input: NodeId, gain: NodeId, bias: NodeId, cache: LayerNormCache },
    Transpose(NodeId),
    SliceRows { input: NodeId, start: usize },
    SliceCols { input: NodeId, start: usize },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    GatherRows { input: NodeId, indices: Vec<usize> },
    Sum(NodeId),
    MseLoss { input: NodeId, target: Matrix },
}

/// One tape entry: value, gradient (allocated by `backward`) and the
/// operation that produced it.
#[derive(Debug)]
pub struct DiffNode {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

impl DiffNode {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn gradient(&self) -> Option<&Matrix> {
        self.grad.as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<DiffNode>,
    flops: u64,
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

    /// Floating-point operations recorded so far (forward and backward).
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn node(&self, id: NodeId) -> &DiffNode {
        &self.nodes[id.0]
    }

    /// Gradient of the last `backward` loss with respect to `id`; zeros if
    /// the node was not reached.
    pub fn grad(&self, id: NodeId) -> Matrix {
        let n = &self.nodes[id.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols()))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), NumericError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericError::Shape {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        let (m, k) = self.shape(a);
        self.flops += 2 * (m * k * v.cols()) as u64;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let v = ops::matmul_nt(self.value(a), self.value(b))?;
        let (m, k) = self.shape(a);
        self.flops += 2 * (m * k * v.cols()) as u64;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).add(self.value(b))?;
        self.flops += v.len() as u64;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumericError> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(NumericError::Shape {
                op: "add_row",
                left: (r, c),
                right: self.shape(bias),
            });
        }
        let b = self.value(bias).as_slice().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..r {
            for (x, bv) in v.row_mut(i).iter_mut().zip(&b) {
                *x += bv;
            }
        }
        self.flops += (r * c) as u64;
        let rg = self.needs(&[a, bias]);
        Ok(self.push(v, Op::AddRow(a, bias), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).sub(self.value(b))?;
        self.flops += v.len() as u64;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).hadamard(self.value(b))?;
        self.flops += v.len() as u64;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.flops += v.len() as u64;
        let rg = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(ops::gelu);
        self.flops += 8 * v.len() as u64;
        let rg = self.needs(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.flops += v.len() as u64;
        let rg = self.needs(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> NodeId {
        let v = ops::softmax_rows_masked(self.value(a), causal);
        self.flops += 4 * v.len() as u64;
        let rg = self.needs(&[a]);
        self.push(v, Op::Softmax(a), rg)
    }

    /// Row-wise layer norm; `gain` and `bias` are `1 × n` nodes.
    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, NumericError> {
        let (v, cache) = ops::layer_norm_with_cache(
            self.value(a),
            self.value(gain).as_slice(),
            self.value(bias).as_slice(),
            eps,
        )?;
        self.flops += 7 * v.len() as u64;
        let rg = self.needs(&[a, gain, bias]);
        Ok(self.push(
            v,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                cache,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, NumericError> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(NumericError::Shape {
                op: "slice_rows",
                left: (r, c),
                right: (start + len, c),
            });
        }
        let v = self.value(a).slice_rows(start, len);
        let rg = self.needs(&[a]);
        Ok(self.push(v, Op::SliceRows { input: a, start }, rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, NumericError> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(NumericError::Shape {
                op: "slice_cols",
                left: (r, c),
                right: (r, start + len),
            });
        }
        let v = self.value(a).slice_cols(start, len);
        let rg = self.needs(&[a]);
        Ok(self.push(v, Op::SliceCols { input: a, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericError> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(NumericError::Shape {
                    op: "concat_rows",
                    left: (rows, cols),
                    right: (r, c),
                });
            }
            data.extend_from_slice(self.value(p).as_slice());
            rows += r;
        }
        let rg = self.needs(parts);
        Ok(self.push(Matrix::from_raw(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericError> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(NumericError::Shape {
                    op: "concat_cols",
                    left: (rows, total),
                    right: (r, c),
                });
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(Matrix::from_raw(rows, total, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Embedding-style lookup: output row `i` is input row `indices[i]`.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId, NumericError> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(NumericError::Contract(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(src.row(i));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(
            Matrix::from_raw(indices.len(), c, data),
            Op::GatherRows {
                input: a,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.flops += self.value(a).len() as u64;
        let rg = self.needs(&[a]);
        self.push(Matrix::from_raw(1, 1, vec![s]), Op::Sum(a), rg)
    }

    /// Mean squared error against a constant target, as a `1 × 1` node.
    pub fn mse_loss(&mut self, a: NodeId, target: Matrix) -> Result<NodeId, NumericError> {
        let pred = self.value(a);
        if pred.shape() != target.shape() || pred.is_empty() {
            return Err(NumericError::Shape {
                op: "mse_loss",
                left: pred.shape(),
                right: target.shape(),
            });
        }
        let n = pred.len() as f64;
        let loss = pred
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / n;
        self.flops += 3 * pred.len() as u64;
        let rg = self.needs(&[a]);
        Ok(self.push(Matrix::from_raw(1, 1, vec![loss]), Op::MseLoss { input: a, target }, rg))
    }

    /// Back-propagates from a scalar `loss`. Every gradient is cleared first,
    /// so gradients always describe exactly this call.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NumericError> {
        if self.shape(loss) != (1, 1) {
            return Err(NumericError::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                self.shape(loss).0,
                self.shape(loss).1
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &upstream)?;
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Matrix) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&mut self, idx: usize, up: &Matrix) -> Result<(), NumericError> {
        // Temporarily move the op out so parent values can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let result = self.propagate_op(idx, &op, up);
        self.nodes[idx].op = op;
        result
    }

    fn propagate_op(&mut self, idx: usize, op: &Op, up: &Matrix) -> Result<(), NumericError> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let g = ops::matmul_nt(up, self.value(b))?;
                    self.flops += 2 * g.len() as u64 * up.cols() as u64;
                    self.accumulate(a, g);
                }
                if self.wants(b) {
                    let g = ops::matmul_tn(self.value(a), up)?;
                    self.flops += 2 * g.len() as u64 * up.rows() as u64;
                    self.accumulate(b, g);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let g = ops::matmul(up, self.value(b))?;
                    self.flops += 2 * g.len() as u64 * up.cols() as u64;
                    self.accumulate(a, g);
                }
                if self.wants(b) {
                    let g = ops::matmul_tn(up, self.value(a))?;
                    self.flops += 2 * g.len() as u64 * up.rows() as u64;
                    self.accumulate(b, g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, up.clone());
                self.accumulate(*b, up.clone());
            }
            Op::AddRow(a, bias) => {
                self.accumulate(*a, up.clone());
                if self.wants(*bias) {
                    let sums = column_sums(up);
                    self.accumulate(*bias, sums);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, up.clone());
                self.accumulate(*b, up.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let g = up.hadamard(self.value(b))?;
                    self.accumulate(a, g);
                }
                if self.wants(b) {
                    let g = up.hadamard(self.value(a))?;
                    self.accumulate(b, g);
                }
            }
            Op::Scale(a, s) => self.accumulate(*a, up.scale(*s)),
            Op::Gelu(a) => {
                let g = self.value(*a).map(ops::gelu_derivative).hadamard(up)?;
                self.accumulate(*a, g);
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let g = mask.hadamard(up)?;
                self.accumulate(*a, g);
            }
            Op::Softmax(input) => {
                let y = &self.nodes[idx].value;
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let ur = up.row(r);
                    let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                    for (j, gv) in g.row_mut(r).iter_mut().enumerate() {
                        *gv = yr[j] * (ur[j] - dot);
                    }
                }
                self.flops += 4 * g.len() as u64;
                self.accumulate(*input, g);
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                cache,
            } => {
                let (input, gain, bias) = (*input, *gain, *bias);
                let xh = &cache.normalized;
                let n = xh.cols();
                if self.wants(gain) {
                    let mut dg = vec![0.0; n];
                    for r in 0..xh.rows() {
                        for (j, d) in dg.iter_mut().enumerate() {
                            *d += up.get(r, j) * xh.get(r, j);
                        }
                    }
                    self.accumulate(gain, Matrix::from_raw(1, n, dg));
                }
                if self.wants(bias) {
                    self.accumulate(bias, column_sums(up));
                }
                if self.wants(input) {
                    let g_vals = self.value(gain).as_slice().to_vec();
                    let mut dx = Matrix::zeros(xh.rows(), n);
                    for r in 0..xh.rows() {
                        let dxh: Vec<f64> = (0..n).map(|j| up.get(r, j) * g_vals[j]).collect();
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(xh.row(r)).map(|(a, b)| a * b).sum();
                        let inv = cache.inv_std[r];
                        for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
                            *out = inv / n as f64
                                * (n as f64 * dxh[j] - sum_d - xh.get(r, j) * sum_dx);
                        }
                    }
                    self.flops += 8 * dx.len() as u64;
                    self.accumulate(input, dx);
                }
            }
            Op::Transpose(a) => self.accumulate(*a, up.transpose()),
            Op::SliceRows { input, start } => {
                let input = *input;
                if self.wants(input) {
                    let (r, c) = self.shape(input);
                    let mut g = Matrix::zeros(r, c);
                    g.as_mut_slice()[start * c..(start + up.rows()) * c]
                        .copy_from_slice(up.as_slice());
                    self.accumulate(input, g);
                }
            }
            Op::SliceCols { input, start } => {
                let input = *input;
                if self.wants(input) {
                    let (r, c) = self.shape(input);
                    let mut g = Matrix::zeros(r, c);
                    for i in 0..r {
                        g.row_mut(i)[*start..start + up.cols()].copy_from_slice(up.row(i));
                    }
                    self.accumulate(input, g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let r = self.shape(p).0;
                    if self.wants(p) {
                        self.accumulate(p, up.slice_rows(offset, r));
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if self.wants(p) {
                        self.accumulate(p, up.slice_cols(offset, c));
                    }
                    offset += c;
                }
            }
            Op::GatherRows { input, indices } => {
                let input = *input;
                if self.wants(input) {
                    let (r, c) = self.shape(input);
                    let mut g = Matrix::zeros(r, c);
                    for (i, &src) in indices.iter().enumerate() {
                        for (d, u) in g.row_mut(src).iter_mut().zip(up.row(i)) {
                            *d += u;
                        }
                    }
                    self.accumulate(input, g);
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(*a, Matrix::filled(r, c, up.get(0, 0)));
            }
            Op::MseLoss { input, target } => {
                let pred = self.value(*input);
                let k = 2.0 * up.get(0, 0) / pred.len() as f64;
                let g = pred.sub(target)?.scale(k);
                self.accumulate(*input, g);
            }
        }
        Ok(())
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut s = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (a, b) in s.iter_mut().zip(m.row(r)) {
            *a += b;
        }
    }
    Matrix::from_raw(1, m.cols(), s)
}

//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Tape`] records every operation applied to the [`Tensor`] handles it
//! hands out. Calling [`Tensor::backward`] on a scalar walks the record in
//! reverse and accumulates gradients into each node's buffer; gradients are
//! added to whatever the buffer already holds until [`Tape::zero_grad`] is
//! called.
//!
//! [`Tensor::detach`] produces a node with the same values whose gradient is
//! never propagated further, so every path through it contributes exactly
//! zero to its ancestors.
//!
//! ```
//! use idil_ood::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.scalar(2.0);
//! let y = tape.scalar(3.0);
//! let z = x.detach().mul(y).unwrap();
//! z.backward().unwrap();
//! assert_eq!(x.grad_or_zero(), vec![0.0]);
//! assert_eq!(y.grad_or_zero(), vec![2.0]);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects a 2-D tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("index {index} out of bounds for {axis} axis of length {len}")]
    IndexOutOfBounds {
        axis: &'static str,
        index: usize,
        len: usize,
    },
    #[error("value buffer of length {values} does not fit shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, values: usize },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("sum over an empty list of tensors")]
    EmptySum,
    #[error("sparse entry index {index} exceeds input dimension {dim}")]
    SparseIndex { index: usize, dim: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Identifier of a node inside one [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One row of a sparse constant input: `(column, weight)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    SparseMatMul { rows: Rc<[SparseRow]>, weight: NodeId },
    AddRowBias(NodeId, NodeId),
    Relu(NodeId),
    Silu(NodeId),
    SoftmaxRows(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumN(Vec<NodeId>),
    Select { src: NodeId, row: usize, col: usize },
    Detach(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::AddRowBias(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Silu(a)
            | Op::SoftmaxRows(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Detach(a) => vec![*a],
            Op::SparseMatMul { weight, .. } => vec![*weight],
            Op::SumN(ids) => ids.clone(),
            Op::Select { src, .. } => vec![*src],
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Rc<[f64]>,
    grad: Option<Vec<f64>>,
    op: Op,
    detached: bool,
}

/// The computation record. Nodes are appended in execution order, so every
/// operation's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of `x·σ(x)`.
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, values: Vec<f64>, op: Op, detached: bool) -> Tensor<'_> {
        debug_assert_eq!(numel(&shape), values.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            shape,
            values: values.into(),
            grad: None,
            op,
            detached,
        });
        Tensor { tape: self, id }
    }

    /// Registers a leaf tensor (parameter or input).
    pub fn leaf(&self, shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor<'_>> {
        if numel(&shape) != values.len() {
            return Err(AutodiffError::BadBuffer {
                shape,
                values: values.len(),
            });
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    pub fn scalar(&self, value: f64) -> Tensor<'_> {
        self.push(vec![], vec![value], Op::Leaf, false)
    }

    pub fn matrix(&self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor<'_>> {
        self.leaf(vec![rows, cols], values)
    }

    /// Sums a non-empty list of same-shaped tensors left to right.
    pub fn sum_all<'t>(&'t self, terms: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        let first = terms.first().ok_or(AutodiffError::EmptySum)?;
        let shape = first.shape();
        let mut acc = vec![0.0; numel(&shape)];
        let nodes = self.nodes.borrow();
        for t in terms {
            let node = &nodes[t.id.0];
            if node.shape != shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: "sum_all",
                    left: shape,
                    right: node.shape.clone(),
                });
            }
            for (a, v) in acc.iter_mut().zip(node.values.iter()) {
                *a += v;
            }
        }
        drop(nodes);
        let ids = terms.iter().map(|t| t.id).collect();
        Ok(self.push(shape, acc, Op::SumN(ids), false))
    }

    /// Dense affine map of a sparse constant input: `rows · weight`, where
    /// `weight` is `[dim × out]`. Produces `[rows.len() × out]`.
    pub fn sparse_matmul<'t>(&'t self, rows: Vec<SparseRow>, weight: Tensor<'t>) -> Result<Tensor<'t>> {
        let (dim, out) = weight.dims2("sparse_matmul")?;
        let w = weight.values();
        let mut values = vec![0.0; rows.len() * out];
        for (r, row) in rows.iter().enumerate() {
            let dst = &mut values[r * out..(r + 1) * out];
            for &(col, x) in row {
                if col >= dim {
                    return Err(AutodiffError::SparseIndex { index: col, dim });
                }
                for (d, wv) in dst.iter_mut().zip(&w[col * out..(col + 1) * out]) {
                    *d += x * wv;
                }
            }
        }
        let n = rows.len();
        Ok(self.push(
            vec![n, out],
            values,
            Op::SparseMatMul {
                rows: rows.into(),
                weight: weight.id,
            },
            false,
        ))
    }

    /// Clears every accumulated gradient buffer.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    pub fn is_detached(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id.0].detached
    }

    /// Input node ids of a recorded operation.
    pub fn inputs_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes.borrow()[id.0].op.inputs()
    }

    fn backward_from(&self, root: NodeId) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let root_node = &nodes[root.0];
        if root_node.values.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_node.shape.clone()));
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = pass[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.detached {
                propagate(&nodes, node, &g, &mut pass);
            }
            let node = &mut nodes[idx];
            match node.grad.as_mut() {
                Some(buf) => {
                    for (b, v) in buf.iter_mut().zip(&g) {
                        *b += v;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(pass: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = pass[id.0].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
    let val = |id: NodeId| -> &[f64] { &nodes[id.0].values };
    let len = |id: NodeId| nodes[id.0].values.len();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(pass, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            accumulate(pass, *b, len(*b), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
        }
        Op::Sub(a, b) => {
            accumulate(pass, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            accumulate(pass, *b, len(*b), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(pass, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * vb[i];
                }
            });
            accumulate(pass, *b, len(*b), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * va[i];
                }
            });
        }
        Op::Neg(a) => {
            accumulate(pass, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
        }
        Op::Scale(a, c) => {
            accumulate(pass, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
        }
        Op::MatMul(a, b) => {
            let (n, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let m = nodes[b.0].shape[1];
            let (va, vb) = (val(*a), val(*b));
            // dA = G · Bᵀ
            accumulate(pass, *a, n * k, |d| {
                for i in 0..n {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += g[i * m + j] * vb[p * m + j];
                        }
                        d[i * k + p] += s;
                    }
                }
            });
            // dB = Aᵀ · G
            accumulate(pass, *b, k * m, |d| {
                for i in 0..n {
                    for p in 0..k {
                        let x = va[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            d[p * m + j] += x * g[i * m + j];
                        }
                    }
                }
            });
        }
        Op::SparseMatMul { rows, weight } => {
            let out = nodes[weight.0].shape[1];
            accumulate(pass, *weight, len(*weight), |d| {
                for (r, row) in rows.iter().enumerate() {
                    let gr = &g[r * out..(r + 1) * out];
                    for &(col, x) in row {
                        for (dv, gv) in d[col * out..(col + 1) * out].iter_mut().zip(gr) {
                            *dv += x * gv;
                        }
                    }
                }
            });
        }
        Op::AddRowBias(a, b) => {
            let m = len(*b);
            accumulate(pass, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            accumulate(pass, *b, m, |d| {
                for (i, gv) in g.iter().enumerate() {
                    d[i % m] += gv;
                }
            });
        }
        Op::Relu(a) => {
            let va = val(*a);
            accumulate(pass, *a, len(*a), |d| {
                for i in 0..d.len() {
                    if va[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Silu(a) => {
            let va = val(*a);
            accumulate(pass, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * silu_grad(va[i]);
                }
            });
        }
        Op::SoftmaxRows(a) => {
            let cols = node.shape[1];
            let y = &node.values;
            accumulate(pass, *a, len(*a), |d| {
                for (r, (yr, gr)) in y.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..cols {
                        d[r * cols + j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::Log(a) => {
            let va = val(*a);
            accumulate(pass, *a, len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] / va[i];
                }
            });
        }
        Op::Sum(a) => {
            accumulate(pass, *a, len(*a), |d| d.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::Mean(a) => {
            let n = len(*a) as f64;
            accumulate(pass, *a, len(*a), |d| d.iter_mut().for_each(|d| *d += g[0] / n));
        }
        Op::SumN(ids) => {
            for id in ids {
                accumulate(pass, *id, len(*id), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
        }
        Op::Select { src, row, col } => {
            let cols = nodes[src.0].shape[1];
            accumulate(pass, *src, len(*src), |d| d[row * cols + col] += g[0]);
        }
        // Detached nodes never reach here; a Detach op is always flagged.
        Op::Detach(_) => {}
    }
}

impl<'t> Tensor<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id.0].shape.clone()
    }

    pub fn values(&self) -> Rc<[f64]> {
        self.tape.nodes.borrow()[self.id.0].values.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id.0].values[0]
    }

    /// Accumulated gradient, or `None` if no backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.nodes.borrow()[self.id.0].grad.clone()
    }

    /// Accumulated gradient, with unreached nodes reported as zeros.
    pub fn grad_or_zero(&self) -> Vec<f64> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id.0];
        node.grad.clone().unwrap_or_else(|| vec![0.0; node.values.len()])
    }

    pub fn is_detached(&self) -> bool {
        self.tape.is_detached(self.id)
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let shape = self.shape();
        match shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(AutodiffError::NotMatrix { op, shape }),
        }
    }

    fn same_shape(&self, other: &Tensor<'t>, op: &'static str) -> Result<()> {
        let (l, r) = (self.shape(), other.shape());
        if l != r {
            return Err(AutodiffError::ShapeMismatch { op, left: l, right: r });
        }
        Ok(())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor<'t> {
        let values = self.values().iter().map(|&x| f(x)).collect();
        self.tape.push(self.shape(), values, op, false)
    }

    fn binary(&self, other: Tensor<'t>, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor<'t>> {
        self.same_shape(&other, name)?;
        let (a, b) = (self.values(), other.values());
        let values = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.tape.push(self.shape(), values, op, false))
    }

    pub fn add(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::Add(self.id, other.id), "add", |x, y| x + y)
    }

    pub fn sub(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), "sub", |x, y| x - y)
    }

    pub fn mul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), "mul", |x, y| x * y)
    }

    pub fn neg(self) -> Tensor<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(self, c: f64) -> Tensor<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    /// `[n × k] · [k × m] → [n × m]`.
    pub fn matmul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = other.dims2("matmul")?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: vec![n, k],
                right: vec![k2, m],
            });
        }
        let (a, b) = (self.values(), other.values());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let x = a[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for j in 0..m {
                    out[i * m + j] += x * b[p * m + j];
                }
            }
        }
        Ok(self.tape.push(vec![n, m], out, Op::MatMul(self.id, other.id), false))
    }

    /// Adds a length-`m` bias to every row of an `[n × m]` matrix.
    pub fn add_row_bias(self, bias: Tensor<'t>) -> Result<Tensor<'t>> {
        let (n, m) = self.dims2("add_row_bias")?;
        let bshape = bias.shape();
        if numel(&bshape) != m {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row_bias",
                left: vec![n, m],
                right: bshape,
            });
        }
        let (a, b) = (self.values(), bias.values());
        let out = a.iter().enumerate().map(|(i, x)| x + b[i % m]).collect();
        Ok(self.tape.push(vec![n, m], out, Op::AddRowBias(self.id, bias.id), false))
    }

    pub fn relu(self) -> Tensor<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// Elementwise `x·σ(x)`.
    pub fn silu(self) -> Tensor<'t> {
        self.unary(Op::Silu(self.id), silu)
    }

    pub fn log(self) -> Tensor<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(self) -> Result<Tensor<'t>> {
        let (_, cols) = self.dims2("softmax_rows")?;
        let v = self.values();
        let mut out = Vec::with_capacity(v.len());
        for row in v.chunks(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            out.extend(exps.into_iter().map(|e| e / z));
        }
        Ok(self.tape.push(self.shape(), out, Op::SoftmaxRows(self.id), false))
    }

    pub fn sum(self) -> Tensor<'t> {
        let s = self.values().iter().sum();
        self.tape.push(vec![], vec![s], Op::Sum(self.id), false)
    }

    pub fn mean(self) -> Tensor<'t> {
        let v = self.values();
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.tape.push(vec![], vec![s], Op::Mean(self.id), false)
    }

    /// Scalar view of `self[row, col]`; the gradient is routed one-hot.
    pub fn select(self, row: usize, col: usize) -> Result<Tensor<'t>> {
        let (rows, cols) = self.dims2("select")?;
        if row >= rows {
            return Err(AutodiffError::IndexOutOfBounds { axis: "row", index: row, len: rows });
        }
        if col >= cols {
            return Err(AutodiffError::IndexOutOfBounds { axis: "column", index: col, len: cols });
        }
        let v = self.values()[row * cols + col];
        Ok(self.tape.push(vec![], vec![v], Op::Select { src: self.id, row, col }, false))
    }

    /// Identity on values; blocks gradient flow into `self` and its ancestors.
    pub fn detach(self) -> Tensor<'t> {
        let values = self.values().to_vec();
        self.tape.push(self.shape(), values, Op::Detach(self.id), true)
    }

    /// Reverse pass from this scalar, accumulating into every reachable
    /// node's gradient buffer.
    pub fn backward(self) -> Result<()> {
        self.tape.backward_from(self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn silu_values() {
        let tape = Tape::new();
        let x = tape.leaf(vec![3], vec![0.0, 0.4, -0.8]).unwrap();
        let y = x.silu().values();
        assert_eq!(y[0], 0.0);
        assert!(close(y[1], 0.239475, 5e-7));
        assert!(close(y[2], -0.248020, 5e-7));
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let x = tape
            .matrix(3, 2, vec![0.0, 0.0, 1000.0, 1000.0, 0.0, 3f64.ln()])
            .unwrap();
        let p = x.softmax_rows().unwrap().values();
        assert_eq!(&p[0..2], &[0.5, 0.5]);
        assert_eq!(&p[2..4], &[0.5, 0.5]);
        assert!(close(p[4], 0.25, 1e-15));
        assert!(close(p[5], 0.75, 1e-15));

        let y = tape.matrix(1, 3, vec![0.0; 3]).unwrap();
        let q = y.softmax_rows().unwrap().values();
        for v in q.iter() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.scalar(2.0);
        let y = tape.scalar(3.0);
        let d = x.detach();
        assert_eq!(d.item(), 2.0);
        d.mul(y).unwrap().backward().unwrap();
        assert_eq!(x.grad(), None);
        assert_eq!(y.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn detach_keeps_values() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1], vec![1.5]).unwrap();
        assert_eq!(&*x.detach().values(), &[1.5]);
    }

    #[test]
    fn select_one_hot_and_bounds() {
        let tape = Tape::new();
        let p = tape.matrix(1, 2, vec![0.2, 0.8]).unwrap();
        let s = p.select(0, 1).unwrap();
        assert_eq!(s.item(), 0.8);
        s.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![0.0, 1.0]);
        match p.select(0, 2) {
            Err(AutodiffError::IndexOutOfBounds { axis, index, len }) => {
                assert_eq!((axis, index, len), ("column", 2, 2));
            }
            other => panic!("expected index error, got {other:?}"),
        }
        assert!(matches!(
            p.select(1, 0),
            Err(AutodiffError::IndexOutOfBounds { axis: "row", .. })
        ));
    }

    #[test]
    fn backward_of_sum() {
        let tape = Tape::new();
        let x = tape.leaf(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2], vec![1.0, 2.0]).unwrap();
        let s = x.sum();
        s.backward().unwrap();
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        tape.zero_grad();
        assert_eq!(x.grad(), None);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.backward(), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn silu_of_product_matches_finite_difference() {
        let f = |w: f64| silu(w * 0.8);
        let tape = Tape::new();
        let w = tape.scalar(0.5);
        let v = tape.scalar(0.8);
        w.mul(v).unwrap().silu().backward().unwrap();
        let h = 1e-5;
        let fd = (f(0.5 + h) - f(0.5 - h)) / (2.0 * h);
        let an = w.grad().unwrap()[0];
        assert!((an - fd).abs() / fd.abs() < 1e-6, "{an} vs {fd}");
    }

    #[test]
    fn only_detached_path_gives_zero() {
        let tape = Tape::new();
        let w = tape.scalar(0.7);
        let c = tape.scalar(2.0);
        let root = w.detach().silu().mul(c).unwrap();
        root.backward().unwrap();
        assert_eq!(w.grad(), None);
    }

    #[test]
    fn record_is_topological() {
        let tape = Tape::new();
        let a = tape.matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tape.matrix(2, 2, vec![0.5, -1.0, 0.0, 2.0]).unwrap();
        let c = a.matmul(b).unwrap().relu().softmax_rows().unwrap();
        let _ = c.select(1, 0).unwrap().detach().log();
        for i in 0..tape.len() {
            for input in tape.inputs_of(NodeId(i)) {
                assert!(input.index() < i);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tape = Tape::new();
        let a = tape.matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = tape.matrix(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(a.matmul(b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(tape.leaf(vec![2, 2], vec![0.0; 3]).is_err());
    }
}

//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive executed on its [`Var`]s in execution
//! order, which is already a topological order. [`Graph::backward`] walks the
//! record in reverse and accumulates gradients for every node that has a path
//! to a parameter. A graph belongs to a single thread; batch parallelism is
//! achieved with independent graphs whose gradients are summed.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::str::FromStr;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvDims, Propagator};
use crate::tensor::Tensor;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBroadcast(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Rc<Tensor>),
    Scale(usize, f64),
    Sum(usize),
    Relu(usize),
    Tanh(usize),
    SoftmaxRows(usize),
    Reshape(usize),
    ConcatLast(Vec<(usize, usize)>),
    SliceLast {
        input: usize,
        start: usize,
    },
    Propagate(usize, Rc<Propagator>),
    Conv2d {
        x: usize,
        kernel: usize,
        bias: usize,
        cols: Rc<Vec<f64>>,
        kmat: Rc<Vec<f64>>,
    },
    MaxPool2(usize, Rc<Vec<Option<usize>>>),
    Upsample2(usize),
    Resize(usize),
    BatchMatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Gather(usize, Rc<Vec<usize>>),
    CrossEntropy {
        logits: usize,
        probs: Rc<Vec<f64>>,
        targets: Rc<Vec<Option<usize>>>,
        count: usize,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// The differentiation record.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
    backpropagated: Cell<bool>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Elementwise or row-wise nonlinearity selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    SoftmaxRows,
}

impl FromStr for Activation {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "softmax_rows" | "softmax" => Ok(Self::SoftmaxRows),
            other => Err(TensorError::InvalidParameter(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backpropagated: Cell::new(false),
        }
    }

    /// Records a differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradient accumulated for `var` by the last [`Graph::backward`].
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().get(var.id).cloned().flatten()
    }

    /// Drops accumulated gradients so that `backward` may run again.
    pub fn reset_grads(&self) {
        self.grads.borrow_mut().clear();
        self.backpropagated.set(false);
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(
            std::ptr::eq(self, loss.graph),
            "loss belongs to another graph"
        );
        if self.backpropagated.get() {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::InvalidShape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", root.value.shape()),
            });
        }
        if !root.requires_grad {
            return Err(TensorError::NoTrace);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                let mut sink = |target: usize, delta: Tensor| {
                    if !nodes[target].requires_grad {
                        return;
                    }
                    match &mut grads[target] {
                        Some(acc) => acc.add_assign(&delta),
                        slot @ None => *slot = Some(delta),
                    }
                };
                backprop(&nodes, node, &g, &mut sink);
            }
            grads[id] = Some(g);
        }
        *self.grads.borrow_mut() = grads;
        self.backpropagated.set(true);
        Ok(())
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, sink: &mut dyn FnMut(usize, Tensor)) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if needs(*a) {
                let mut da = vec![0.0; m * k];
                kernels::gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                sink(*a, Tensor::new(vec![m, k], da).unwrap());
            }
            if needs(*b) {
                let mut db = vec![0.0; k * n];
                kernels::gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                sink(*b, Tensor::new(vec![k, n], db).unwrap());
            }
        }
        Op::Add(a, b) => {
            sink(*a, g.clone());
            sink(*b, g.clone());
        }
        Op::AddBroadcast(a, b) => {
            sink(*a, g.clone());
            if needs(*b) {
                let bshape = val(*b).shape().to_vec();
                let block: usize = bshape.iter().product();
                let mut db = vec![0.0; block];
                for chunk in g.data().chunks_exact(block) {
                    for (d, v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                sink(*b, Tensor::new(bshape, db).unwrap());
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                sink(*a, zip_map(g, bv, |x, y| x * y));
            }
            if needs(*b) {
                sink(*b, zip_map(g, av, |x, y| x * y));
            }
        }
        Op::MulConst(a, c) => sink(*a, zip_map(g, c, |x, y| x * y)),
        Op::Scale(a, s) => sink(*a, g.map(|x| x * s)),
        Op::Sum(a) => sink(*a, Tensor::full(val(*a).shape(), g.item())),
        Op::Relu(a) => sink(
            *a,
            zip_map(g, val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 }),
        ),
        Op::Tanh(a) => sink(*a, zip_map(g, &node.value, |gx, t| gx * (1.0 - t * t))),
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            let cols = *y.shape().last().unwrap();
            let mut dx = vec![0.0; y.len()];
            for ((yr, gr), dr) in y
                .data()
                .chunks_exact(cols)
                .zip(g.data().chunks_exact(cols))
                .zip(dx.chunks_exact_mut(cols))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                for ((d, &p), &q) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = p * (q - dot);
                }
            }
            sink(*a, Tensor::new(y.shape().to_vec(), dx).unwrap());
        }
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            sink(*a, g.clone().reshape(&shape).unwrap());
        }
        Op::ConcatLast(parts) => {
            let total = *node.value.shape().last().unwrap();
            let mut offset = 0;
            for &(id, width) in parts {
                if needs(id) {
                    let mut d = Vec::with_capacity(g.len() / total * width);
                    for row in g.data().chunks_exact(total) {
                        d.extend_from_slice(&row[offset..offset + width]);
                    }
                    sink(id, Tensor::new(val(id).shape().to_vec(), d).unwrap());
                }
                offset += width;
            }
        }
        Op::SliceLast { input, start } => {
            let src = val(*input);
            let total = *src.shape().last().unwrap();
            let width = *node.value.shape().last().unwrap();
            let mut d = vec![0.0; src.len()];
            for (dst, row) in d.chunks_exact_mut(total).zip(g.data().chunks_exact(width)) {
                dst[*start..*start + width].copy_from_slice(row);
            }
            sink(*input, Tensor::new(src.shape().to_vec(), d).unwrap());
        }
        Op::Propagate(a, prop) => {
            let width = g.shape()[1];
            let d = prop.apply(g.data(), width, true);
            sink(*a, Tensor::new(g.shape().to_vec(), d).unwrap());
        }
        Op::Conv2d {
            x,
            kernel,
            bias,
            cols,
            kmat,
        } => {
            let xs = val(*x).shape().to_vec();
            let c_out = node.value.shape()[3];
            let d = ConvDims {
                batch: xs[0],
                h: xs[1],
                w: xs[2],
                c_in: xs[3],
                c_out,
            };
            let rows = d.batch * d.h * d.w;
            let width = 9 * d.c_in;
            if needs(*kernel) {
                let mut dk = vec![0.0; width * c_out];
                kernels::gemm(
                    width,
                    rows,
                    c_out,
                    cols,
                    true,
                    g.data(),
                    false,
                    &mut dk,
                    0.0,
                );
                let k = kernels::matrix_to_kernel(&dk, d.c_in, c_out);
                sink(*kernel, Tensor::new(vec![c_out, d.c_in, 3, 3], k).unwrap());
            }
            if needs(*bias) {
                let mut db = vec![0.0; c_out];
                for row in g.data().chunks_exact(c_out) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                sink(*bias, Tensor::new(vec![c_out], db).unwrap());
            }
            if needs(*x) {
                let mut dcols = vec![0.0; rows * width];
                kernels::gemm(
                    rows,
                    c_out,
                    width,
                    g.data(),
                    false,
                    kmat,
                    true,
                    &mut dcols,
                    0.0,
                );
                let dx = kernels::col2im3(&dcols, &d);
                sink(*x, Tensor::new(xs, dx).unwrap());
            }
        }
        Op::MaxPool2(a, arg) => {
            let xs = val(*a).shape().to_vec();
            let mut dx = vec![0.0; val(*a).len()];
            for (gv, idx) in g.data().iter().zip(arg.iter()) {
                if let Some(i) = idx {
                    dx[*i] += gv;
                }
            }
            sink(*a, Tensor::new(xs, dx).unwrap());
        }
        Op::Upsample2(a) => {
            let xs = val(*a).shape().to_vec();
            let dx = kernels::upsample2_backward(g.data(), xs[0], xs[1], xs[2], xs[3]);
            sink(*a, Tensor::new(xs, dx).unwrap());
        }
        Op::Resize(a) => {
            let xs = val(*a).shape().to_vec();
            let gs = g.shape();
            let mut dx = vec![0.0; val(*a).len()];
            kernels::copy_spatial(
                g.data(),
                (gs[1], gs[2]),
                &mut dx,
                (xs[1], xs[2]),
                xs[0],
                xs[3],
            );
            sink(*a, Tensor::new(xs, dx).unwrap());
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let (av, bv) = (val(*a), val(*b));
            let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = node.value.shape()[2];
            let mut da = vec![0.0; av.len()];
            let mut db = vec![0.0; bv.len()];
            for i in 0..batch {
                let ab = &av.data()[i * m * k..(i + 1) * m * k];
                let bb = &bv.data()[i * k * n..(i + 1) * k * n];
                let gb = &g.data()[i * m * n..(i + 1) * m * n];
                // out = a · op(b); da = g · op(b)ᵀ
                kernels::gemm(
                    m,
                    n,
                    k,
                    gb,
                    false,
                    bb,
                    !*trans_b,
                    &mut da[i * m * k..(i + 1) * m * k],
                    0.0,
                );
                if *trans_b {
                    // b is n×k: db = gᵀ · a
                    kernels::gemm(
                        n,
                        m,
                        k,
                        gb,
                        true,
                        ab,
                        false,
                        &mut db[i * k * n..(i + 1) * k * n],
                        0.0,
                    );
                } else {
                    kernels::gemm(
                        k,
                        m,
                        n,
                        ab,
                        true,
                        gb,
                        false,
                        &mut db[i * k * n..(i + 1) * k * n],
                        0.0,
                    );
                }
            }
            sink(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
            sink(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
        }
        Op::Gather(table, idx) => {
            let tv = val(*table);
            let width = tv.shape()[1];
            let mut dt = vec![0.0; tv.len()];
            for (row, &i) in g.data().chunks_exact(width).zip(idx.iter()) {
                for (d, v) in dt[i * width..(i + 1) * width].iter_mut().zip(row) {
                    *d += v;
                }
            }
            sink(*table, Tensor::new(tv.shape().to_vec(), dt).unwrap());
        }
        Op::CrossEntropy {
            logits,
            probs,
            targets,
            count,
        } => {
            let shape = val(*logits).shape().to_vec();
            let classes = shape[1];
            let scale = g.item() / *count as f64;
            let mut d = vec![0.0; probs.len()];
            for (r, t) in targets.iter().enumerate() {
                if let Some(t) = t {
                    for c in 0..classes {
                        let onehot = if c == *t { 1.0 } else { 0.0 };
                        d[r * classes + c] = scale * (probs[r * classes + c] - onehot);
                    }
                }
            }
            sink(*logits, Tensor::new(shape, d).unwrap());
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn rank_is(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::InvalidShape {
            op,
            detail: format!("expected rank {rank}, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }

    fn check(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars from different graphs"
        );
    }

    fn emit(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'g> {
        let rg = inputs.iter().any(|&i| self.graph.requires(i));
        self.graph.push(value, op, rg)
    }

    /// Rank-2 product `[m×k]·[k×n]`.
    pub fn matmul(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.check(&rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.emit(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    pub fn add(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.check(&rhs);
        let (a, b) = (self.value(), rhs.value());
        same_shape("add", &a, &b)?;
        let value = zip_map(&a, &b, |x, y| x + y);
        Ok(self.emit(value, Op::Add(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Adds `rhs` to every trailing block of `self`; `rhs.shape()` must equal
    /// the trailing dimensions of `self.shape()` (e.g. a bias row).
    pub fn add_broadcast(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.check(&rhs);
        let (a, b) = (self.value(), rhs.value());
        let (ar, br) = (a.rank(), b.rank());
        if br > ar || a.shape()[ar - br..] != *b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let block = b.len();
        let mut out = a.data().to_vec();
        for chunk in out.chunks_exact_mut(block) {
            for (o, v) in chunk.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        let value = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.emit(value, Op::AddBroadcast(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.check(&rhs);
        let (a, b) = (self.value(), rhs.value());
        same_shape("mul", &a, &b)?;
        let value = zip_map(&a, &b, |x, y| x * y);
        Ok(self.emit(value, Op::Mul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&self, mask: Tensor) -> Result<Var<'g>> {
        let a = self.value();
        same_shape("mul_const", &a, &mask)?;
        let value = zip_map(&a, &mask, |x, y| x * y);
        Ok(self.emit(value, Op::MulConst(self.id, Rc::new(mask)), &[self.id]))
    }

    pub fn scale(&self, factor: f64) -> Var<'g> {
        let value = self.value().map(|x| x * factor);
        self.emit(value, Op::Scale(self.id, factor), &[self.id])
    }

    pub fn sum(&self) -> Var<'g> {
        let total = self.value().data().iter().sum();
        self.emit(Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    pub fn relu(&self) -> Var<'g> {
        let value = self.value().map(|x| if x > 0.0 { x } else { 0.0 });
        self.emit(value, Op::Relu(self.id), &[self.id])
    }

    pub fn tanh(&self) -> Var<'g> {
        let value = self.value().map(f64::tanh);
        self.emit(value, Op::Tanh(self.id), &[self.id])
    }

    /// Normalizes each row of a rank-2 tensor to a probability vector.
    pub fn softmax_rows(&self) -> Result<Var<'g>> {
        let a = self.value();
        rank_is("softmax_rows", &a, 2)?;
        let out = kernels::softmax_rows(a.data(), a.shape()[1]);
        let value = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.emit(value, Op::SoftmaxRows(self.id), &[self.id]))
    }

    pub fn activation(&self, kind: Activation) -> Result<Var<'g>> {
        match kind {
            Activation::Relu => Ok(self.relu()),
            Activation::Tanh => Ok(self.tanh()),
            Activation::SoftmaxRows => self.softmax_rows(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let value = (*self.value()).clone().reshape(shape)?;
        Ok(self.emit(value, Op::Reshape(self.id), &[self.id]))
    }

    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat_last(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat_last",
            detail: "no inputs".into(),
        })?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let lead = &values[0].shape()[..values[0].rank() - 1];
        for (p, v) in parts.iter().zip(&values) {
            first.check(p);
            if v.rank() != values[0].rank() || &v.shape()[..v.rank() - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        let widths: Vec<usize> = values.iter().map(|v| *v.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let rows = values[0].len() / widths[0];
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let op = Op::ConcatLast(ids.iter().copied().zip(widths).collect());
        Ok(first.emit(Tensor::new(shape, out)?, op, &ids))
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<'g>> {
        let a = self.value();
        let total = *a.shape().last().unwrap();
        if len == 0 || start + len > total {
            return Err(TensorError::InvalidShape {
                op: "slice_last",
                detail: format!("range {start}..{} outside width {total}", start + len),
            });
        }
        let mut out = Vec::with_capacity(a.len() / total * len);
        for row in a.data().chunks_exact(total) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.emit(
            value,
            Op::SliceLast {
                input: self.id,
                start,
            },
            &[self.id],
        ))
    }

    /// Applies a fixed `n×n` operator to every `n`-row block of a
    /// `[blocks·n, width]` matrix.
    pub fn propagate(&self, op: &Rc<Propagator>) -> Result<Var<'g>> {
        let a = self.value();
        if a.rank() != 2 || !a.shape()[0].is_multiple_of(op.size()) {
            return Err(TensorError::InvalidShape {
                op: "propagate",
                detail: format!(
                    "shape {:?} is not a stack of {}-row blocks",
                    a.shape(),
                    op.size()
                ),
            });
        }
        let out = op.apply(a.data(), a.shape()[1], false);
        let value = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.emit(value, Op::Propagate(self.id, Rc::clone(op)), &[self.id]))
    }

    /// Zero-padded same-size 3×3 convolution of `[batch, h, w, c_in]` with a
    /// `[c_out, c_in, 3, 3]` kernel and `[c_out]` bias.
    pub fn conv2d_same(&self, kernel: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        self.check(&kernel);
        self.check(&bias);
        let (x, k, b) = (self.value(), kernel.value(), bias.value());
        rank_is("conv2d_same", &x, 4)?;
        let ks = k.shape();
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 || ks[1] != x.shape()[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_same",
                lhs: x.shape().to_vec(),
                rhs: ks.to_vec(),
            });
        }
        if b.shape() != [ks[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_same bias",
                lhs: ks.to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let xs = x.shape();
        let d = ConvDims {
            batch: xs[0],
            h: xs[1],
            w: xs[2],
            c_in: xs[3],
            c_out: ks[0],
        };
        let cols = kernels::im2col3(x.data(), &d);
        let kmat = kernels::kernel_to_matrix(k.data(), d.c_in, d.c_out);
        let rows = d.batch * d.h * d.w;
        let mut out = Vec::with_capacity(rows * d.c_out);
        for _ in 0..rows {
            out.extend_from_slice(b.data());
        }
        kernels::gemm(
            rows,
            9 * d.c_in,
            d.c_out,
            &cols,
            false,
            &kmat,
            false,
            &mut out,
            1.0,
        );
        let value = Tensor::new(vec![d.batch, d.h, d.w, d.c_out], out)?;
        let op = Op::Conv2d {
            x: self.id,
            kernel: kernel.id,
            bias: bias.id,
            cols: Rc::new(cols),
            kmat: Rc::new(kmat),
        };
        Ok(self.emit(value, op, &[self.id, kernel.id, bias.id]))
    }

    /// 2×2/stride-2 max pooling over a `[batch, h, w, c]` tensor; odd extents
    /// are zero-padded (output extents round up).
    pub fn maxpool2(&self) -> Result<Var<'g>> {
        let x = self.value();
        rank_is("maxpool2", &x, 4)?;
        let s = x.shape();
        let (out, arg) = kernels::maxpool2(x.data(), s[0], s[1], s[2], s[3]);
        let value = Tensor::new(vec![s[0], s[1].div_ceil(2), s[2].div_ceil(2), s[3]], out)?;
        Ok(self.emit(value, Op::MaxPool2(self.id, Rc::new(arg)), &[self.id]))
    }

    /// Nearest-neighbour 2× upsampling of a `[batch, h, w, c]` tensor.
    pub fn upsample2(&self) -> Result<Var<'g>> {
        let x = self.value();
        rank_is("upsample2", &x, 4)?;
        let s = x.shape();
        let out = kernels::upsample2(x.data(), s[0], s[1], s[2], s[3]);
        let value = Tensor::new(vec![s[0], 2 * s[1], 2 * s[2], s[3]], out)?;
        Ok(self.emit(value, Op::Upsample2(self.id), &[self.id]))
    }

    /// Zero-pads (bottom/right) or crops (keeping the top-left corner) the
    /// spatial extents of a `[batch, h, w, c]` tensor to `h × w`.
    pub fn resize_spatial(&self, h: usize, w: usize) -> Result<Var<'g>> {
        let x = self.value();
        rank_is("resize_spatial", &x, 4)?;
        if h == 0 || w == 0 {
            return Err(TensorError::InvalidShape {
                op: "resize_spatial",
                detail: "zero target extent".into(),
            });
        }
        let s = x.shape();
        let mut out = vec![0.0; s[0] * h * w * s[3]];
        kernels::copy_spatial(x.data(), (s[1], s[2]), &mut out, (h, w), s[0], s[3]);
        let value = Tensor::new(vec![s[0], h, w, s[3]], out)?;
        Ok(self.emit(value, Op::Resize(self.id), &[self.id]))
    }

    /// Batched product of `[b, m, k]` with `[b, k, n]`, or with `[b, n, k]`
    /// transposed when `trans_rhs` is set.
    pub fn batch_matmul(&self, rhs: Var<'g>, trans_rhs: bool) -> Result<Var<'g>> {
        self.check(&rhs);
        let (a, b) = (self.value(), rhs.value());
        let mismatch = || TensorError::ShapeMismatch {
            op: "batch_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let (bk, n) = if trans_rhs {
            (b.shape()[2], b.shape()[1])
        } else {
            (b.shape()[1], b.shape()[2])
        };
        if bk != k {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            kernels::gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                false,
                &b.data()[i * k * n..(i + 1) * k * n],
                trans_rhs,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        let op = Op::BatchMatMul {
            a: self.id,
            b: rhs.id,
            trans_b: trans_rhs,
        };
        Ok(self.emit(value, op, &[self.id, rhs.id]))
    }

    /// Row lookup into a `[rows, width]` table (embedding gather).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'g>> {
        let t = self.value();
        rank_is("gather_rows", &t, 2)?;
        let (rows, width) = (t.shape()[0], t.shape()[1]);
        if indices.is_empty() {
            return Err(TensorError::InvalidParameter("empty gather".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::InvalidParameter(format!(
                    "gather index {i} outside {rows} rows"
                )));
            }
            out.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
        }
        let value = Tensor::new(vec![indices.len(), width], out)?;
        Ok(self.emit(
            value,
            Op::Gather(self.id, Rc::new(indices.to_vec())),
            &[self.id],
        ))
    }

    /// Mean over rows with `mask[r]` of `−log softmax(logits_r)[targets[r]]`.
    pub fn masked_cross_entropy(&self, targets: &[usize], mask: &[bool]) -> Result<Var<'g>> {
        let a = self.value();
        rank_is("masked_cross_entropy", &a, 2)?;
        let (rows, classes) = (a.shape()[0], a.shape()[1]);
        if targets.len() != rows || mask.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "masked_cross_entropy",
                lhs: a.shape().to_vec(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::InvalidParameter("empty loss mask".into()));
        }
        let probs = kernels::softmax_rows(a.data(), classes);
        let mut total = 0.0;
        let mut kept = Vec::with_capacity(rows);
        for r in 0..rows {
            if !mask[r] {
                kept.push(None);
                continue;
            }
            let t = targets[r];
            if t >= classes {
                return Err(TensorError::InvalidParameter(format!(
                    "target class {t} outside {classes}"
                )));
            }
            let row = &a.data()[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            kept.push(Some(t));
        }
        let value = Tensor::scalar(total / count as f64);
        let op = Op::CrossEntropy {
            logits: self.id,
            probs: Rc::new(probs),
            targets: Rc::new(kept),
            count,
        };
        Ok(self.emit(value, op, &[self.id]))
    }
}

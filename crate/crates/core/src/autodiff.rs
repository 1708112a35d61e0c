//! Record-on-forward reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation
//! computes its value eagerly and appends a node; [`Graph::backward`]
//! walks the nodes in reverse creation order, accumulating gradients in
//! place, and finally adds the gradients of parameter leaves into the
//! [`ParamStore`]. Nodes that do not depend on any parameter are never
//! differentiated.

use std::collections::HashMap;

use thiserror::Error;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Matrix, Reduce, Scalar, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward already ran on this graph; record a new forward pass")]
    AlreadyBackpropagated,
    #[error("loss must be a 1x1 node, got {0:?}")]
    NonScalarLoss((usize, usize)),
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    RowSlice { x: Var, start: usize },
    ColSlice { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MaxPool { x: Var, argmax: Vec<usize> },
    MeanPool { x: Var, start: usize, len: usize },
    MulConst { x: Var, c: Matrix<T> },
    BceMean { p: Var, labels: Vec<T>, eps: T },
    Sum(Var),
}

struct Node<T: Scalar> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Adds a `1 × c` bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let b = self.value(bias);
        if b.rows() != 1 {
            return Err(TensorError::Shape {
                op: "add_row",
                left: self.shape(a),
                right: b.shape(),
            });
        }
        let value = self.value(a).add_row(b.data())?;
        Ok(self.push(value, Op::AddRow(a, bias), &[a, bias]))
    }

    /// `x · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).sigmoid_map();
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    /// Row softmax; columns with a false `key_mask` entry get probability 0.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let value = self.value(a).softmax_rows(key_mask)?;
        Ok(self.push(value, Op::Softmax(a), &[a]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let value = self.value(x).slice_rows(start, len)?;
        Ok(self.push(value, Op::RowSlice { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let src = self.value(x);
        if start + len > src.cols() {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                len: src.cols(),
            });
        }
        let mut value = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        Ok(self.push(value, Op::ColSlice { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&mats)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&mats)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Column-wise pooling over rows `start..start+len` of `x`, giving `1 × c`.
    pub fn pool_rows(&mut self, x: Var, start: usize, len: usize, mode: Reduce) -> Result<Var, TensorError> {
        let src = self.value(x);
        if len == 0 {
            return Err(TensorError::EmptyMask { op: "pool_rows" });
        }
        if start + len > src.rows() {
            return Err(TensorError::Index {
                op: "pool_rows",
                index: start + len,
                len: src.rows(),
            });
        }
        let cols = src.cols();
        match mode {
            Reduce::Max => {
                let mut argmax = vec![start; cols];
                let mut out = src.row(start).to_vec();
                for r in start + 1..start + len {
                    for (c, &v) in src.row(r).iter().enumerate() {
                        if v > out[c] {
                            out[c] = v;
                            argmax[c] = r;
                        }
                    }
                }
                let value = Matrix::row_vector(out);
                Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
            }
            Reduce::Mean => {
                let mut out = vec![T::zero(); cols];
                for r in start..start + len {
                    for (o, &v) in out.iter_mut().zip(src.row(r)) {
                        *o = *o + v;
                    }
                }
                let n = T::of(len as f64);
                out.iter_mut().for_each(|o| *o = *o / n);
                let value = Matrix::row_vector(out);
                Ok(self.push(value, Op::MeanPool { x, start, len }, &[x]))
            }
        }
    }

    /// Elementwise product with a fixed matrix (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Matrix<T>) -> Result<Var, TensorError> {
        let value = self.value(x).hadamard(&c)?;
        Ok(self.push(value, Op::MulConst { x, c }, &[x]))
    }

    /// Mean binary cross-entropy of an `n × 1` probability column, with
    /// probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce_mean(&mut self, p: Var, labels: &[T], eps: T) -> Result<Var, TensorError> {
        let pv = self.value(p);
        if pv.cols() != 1 || pv.rows() != labels.len() {
            return Err(TensorError::Shape {
                op: "bce_mean",
                left: pv.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut total = 0.0f64;
        for (&pi, &yi) in pv.data().iter().zip(labels) {
            total += bce(pi, yi, eps).as_f64();
        }
        let value = Matrix::filled(1, 1, T::of(total / labels.len() as f64));
        Ok(self.push(
            value,
            Op::BceMean {
                p,
                labels: labels.to_vec(),
                eps,
            },
            &[p],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().map(|x| x.as_f64()).sum();
        self.push(Matrix::filled(1, 1, T::of(total)), Op::Sum(a), &[a])
    }

    /// Propagates d(loss)/d(node) to every parameter leaf and adds the
    /// result into the store's gradient slots.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(id) = node.param {
                store.accumulate_grad(id, &g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        macro_rules! acc {
            ($v:expr) => {
                slot(nodes, grads, $v)
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    gemm_nt(g, &nodes[b.0].value, acc!(*a), T::one(), T::one());
                }
                if self.needs(*b) {
                    gemm_tn(&nodes[a.0].value, g, acc!(*b), T::one(), T::one());
                }
            }
            Op::MatMulNt(a, b) => {
                if self.needs(*a) {
                    gemm_nn(g, &nodes[b.0].value, acc!(*a), T::one(), T::one());
                }
                if self.needs(*b) {
                    gemm_tn(g, &nodes[a.0].value, acc!(*b), T::one(), T::one());
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*a) {
                    add_into(acc!(*a).data_mut(), g.data());
                }
                if self.needs(*bias) {
                    let gb = acc!(*bias);
                    for r in 0..g.rows() {
                        add_into(gb.data_mut(), g.row(r));
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        add_into(acc!(v).data_mut(), g.data());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let other = &nodes[b.0].value;
                    for ((d, &gi), &o) in acc!(*a).data_mut().iter_mut().zip(g.data()).zip(other.data()) {
                        *d = *d + gi * o;
                    }
                }
                if self.needs(*b) {
                    let other = &nodes[a.0].value;
                    for ((d, &gi), &o) in acc!(*b).data_mut().iter_mut().zip(g.data()).zip(other.data()) {
                        *d = *d + gi * o;
                    }
                }
            }
            Op::Scale(a, s) => {
                for (d, &gi) in acc!(*a).data_mut().iter_mut().zip(g.data()) {
                    *d = *d + gi * *s;
                }
            }
            Op::Sigmoid(a) => {
                for ((d, &gi), &y) in acc!(*a).data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *d = *d + gi * y * (T::one() - y);
                }
            }
            Op::Relu(a) => {
                for ((d, &gi), &y) in acc!(*a).data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    if y > T::zero() {
                        *d = *d + gi;
                    }
                }
            }
            Op::Softmax(a) => {
                let da = acc!(*a);
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = g.row(r);
                    let dot = y.iter().zip(gy).fold(T::zero(), |s, (&yi, &gi)| s + yi * gi);
                    for ((d, &yi), &gi) in da.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *d = *d + yi * (gi - dot);
                    }
                }
            }
            Op::RowSlice { x, start } => {
                let c = g.cols();
                let dx = acc!(*x);
                add_into(&mut dx.data_mut()[start * c..(start + g.rows()) * c], g.data());
            }
            Op::ColSlice { x, start } => {
                let dx = acc!(*x);
                for r in 0..g.rows() {
                    add_into(&mut dx.row_mut(r)[*start..start + g.cols()], g.row(r));
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let c = g.cols();
                for &p in parts {
                    let rows = nodes[p.0].value.rows();
                    if self.needs(p) {
                        add_into(acc!(p).data_mut(), &g.data()[off * c..(off + rows) * c]);
                    }
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = nodes[p.0].value.cols();
                    if self.needs(p) {
                        let dp = acc!(p);
                        for r in 0..g.rows() {
                            add_into(dp.row_mut(r), &g.row(r)[off..off + cols]);
                        }
                    }
                    off += cols;
                }
            }
            Op::MaxPool { x, argmax } => {
                let dx = acc!(*x);
                for (c, &r) in argmax.iter().enumerate() {
                    let v = dx.get(r, c) + g.get(0, c);
                    dx.set(r, c, v);
                }
            }
            Op::MeanPool { x, start, len } => {
                let dx = acc!(*x);
                let n = T::of(*len as f64);
                for r in *start..start + len {
                    for (d, &gi) in dx.row_mut(r).iter_mut().zip(g.data()) {
                        *d = *d + gi / n;
                    }
                }
            }
            Op::MulConst { x, c } => {
                for ((d, &gi), &ci) in acc!(*x).data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                    *d = *d + gi * ci;
                }
            }
            Op::BceMean { p, labels, eps } => {
                let pv = &nodes[p.0].value;
                let scale = g.get(0, 0) / T::of(labels.len() as f64);
                let dp = acc!(*p);
                for ((d, &pi), &yi) in dp.data_mut().iter_mut().zip(pv.data()).zip(labels) {
                    if pi < *eps || pi > T::one() - *eps {
                        continue;
                    }
                    *d = *d + scale * (-(yi / pi) + (T::one() - yi) / (T::one() - pi));
                }
            }
            Op::Sum(a) => {
                let s = g.get(0, 0);
                acc!(*a).data_mut().iter_mut().for_each(|d| *d = *d + s);
            }
        }
    }
}

fn slot<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Matrix<T>>], v: Var) -> &'a mut Matrix<T> {
    let (r, c) = nodes[v.0].value.shape();
    grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Binary cross-entropy of one probability, clamped to `[eps, 1 - eps]`.
pub fn bce<T: Scalar>(p: T, y: T, eps: T) -> T {
    let p = p.max(eps).min(T::one() - eps);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, m: Matrix<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, m).unwrap();
        (s, id)
    }

    #[test]
    fn sum_of_wx_gives_outer_product_gradient() {
        // loss = sum(W · x) with W 2x3, x 3x1 → dL/dW[i][j] = x[j]
        let (mut s, w) = store_with("w", Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
        let mut g = Graph::new();
        let wv = g.param(&s, w);
        let x = g.constant(Matrix::from_rows(&[[0.5], [-1.0], [2.0]]));
        let y = g.matmul(wv, x).unwrap();
        let l = g.sum(y);
        g.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(w).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn unused_parameter_has_zero_grad() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Matrix::filled(1, 2, 1.0)).unwrap();
        let b = s.add("b", Matrix::filled(1, 2, 1.0)).unwrap();
        let mut g = Graph::new();
        let av = g.param(&s, a);
        let l = g.sum(av);
        g.backward(l, &mut s).unwrap();
        assert!(s.grad(b).data().iter().all(|&x| x == 0.0));
        assert_eq!(s.grad(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let (mut s, w) = store_with("w", Matrix::filled(1, 1, 2.0));
        let mut g = Graph::new();
        let wv = g.param(&s, w);
        let l = g.sum(wv);
        g.backward(l, &mut s).unwrap();
        assert_eq!(g.backward(l, &mut s), Err(AutodiffError::AlreadyBackpropagated));
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let (mut s, w) = store_with("w", Matrix::filled(2, 2, 0.5));
        let mut g = Graph::new();
        let x = g.constant(Matrix::identity(2));
        let wv = g.param(&s, w);
        let y = g.matmul(x, wv).unwrap();
        let l = g.sum(y);
        g.backward(l, &mut s).unwrap();
        assert_eq!(s.grad(w).data(), &[1.0; 4]);
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce(0.5f64, 1.0, 1e-7) - 2f64.ln()).abs() < 1e-12);
        assert!((bce(0.5f64, 0.0, 1e-7) - 2f64.ln()).abs() < 1e-12);
        assert!(bce(1.0f32, 1.0, 1e-7) <= 1.2e-7);
        assert!(bce(0.0f32, 0.0, 1e-7) <= 1.2e-7);
        assert!(bce(0.0f32, 1.0, 1e-7).is_finite());
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let l = bce(i as f64 / 100.0, 1.0, 1e-7);
            assert!(l < prev);
            prev = l;
        }
    }
}

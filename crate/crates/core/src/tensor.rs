//! Dense row-major matrices.
//!
//! Everything numeric in the crate is a [`Matrix`]; vectors are plain
//! slices or `1 × n` matrices when they have to flow through an autodiff
//! [`Graph`](crate::autodiff::Graph). The element type is generic so the
//! same model code runs in `f32` for training and in `f64` for gradient
//! checks.

use std::fmt::{self, Debug};

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: data length {len} does not match {rows}x{cols}")]
    Length {
        op: &'static str,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("{op}: mask selects no rows")]
    EmptyMask { op: &'static str },
    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
}

/// Floating-point element type usable by the numeric core.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a · b + beta * c` over raw strided buffers.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
    ) {
        assert!(c.len() >= m * n);
        // SAFETY: callers pass buffers whose strides stay within the slices;
        // every call site in this module derives them from checked shapes.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
    ) {
        assert!(c.len() >= m * n);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

/// Row reduction mode for [`Matrix::reduce_rows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Mean,
    Max,
}

#[derive(Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::Length {
                op: "from_vec",
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies `len` rows starting at `start`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self, TensorError> {
        if start + len > self.rows {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                len: self.rows,
            });
        }
        Ok(Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        })
    }

    pub fn matmul(&self, b: &Self) -> Result<Self, TensorError> {
        if self.cols != b.rows {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, b.cols);
        gemm_nn(self, b, &mut out, T::one(), T::zero());
        Ok(out)
    }

    /// `self · bᵀ`.
    pub fn matmul_nt(&self, b: &Self) -> Result<Self, TensorError> {
        if self.cols != b.cols {
            return Err(TensorError::Shape {
                op: "matmul_nt",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, b.rows);
        gemm_nt(self, b, &mut out, T::one(), T::zero());
        Ok(out)
    }

    /// `selfᵀ · b`.
    pub fn matmul_tn(&self, b: &Self) -> Result<Self, TensorError> {
        if self.rows != b.rows {
            return Err(TensorError::Shape {
                op: "matmul_tn",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Self::zeros(self.cols, b.cols);
        gemm_tn(self, b, &mut out, T::one(), T::zero());
        Ok(out)
    }

    fn zip_with(&self, b: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        if self.shape() != b.shape() {
            return Err(TensorError::Shape {
                op,
                left: self.shape(),
                right: b.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(&self, b: &Self) -> Result<Self, TensorError> {
        self.zip_with(b, "add", |x, y| x + y)
    }

    pub fn sub(&self, b: &Self) -> Result<Self, TensorError> {
        self.zip_with(b, "sub", |x, y| x - y)
    }

    pub fn hadamard(&self, b: &Self) -> Result<Self, TensorError> {
        self.zip_with(b, "hadamard", |x, y| x * y)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Adds `bias` to every row.
    pub fn add_row(&self, bias: &[T]) -> Result<Self, TensorError> {
        if bias.len() != self.cols {
            return Err(TensorError::Shape {
                op: "add_row",
                left: self.shape(),
                right: (1, bias.len()),
            });
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (x, &b) in out.row_mut(r).iter_mut().zip(bias) {
                *x = *x + b;
            }
        }
        Ok(out)
    }

    pub fn sigmoid_map(&self) -> Self {
        self.map(sigmoid)
    }

    /// Row-wise softmax with max subtraction. Columns whose `key_mask`
    /// entry is false receive probability zero.
    pub fn softmax_rows(&self, key_mask: Option<&[bool]>) -> Result<Self, TensorError> {
        if let Some(mask) = key_mask {
            if mask.len() != self.cols {
                return Err(TensorError::Shape {
                    op: "softmax_rows",
                    left: self.shape(),
                    right: (1, mask.len()),
                });
            }
            if !mask.iter().any(|&m| m) {
                return Err(TensorError::EmptyMask { op: "softmax_rows" });
            }
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            softmax_in_place(out.row_mut(r), key_mask);
        }
        Ok(out)
    }

    /// Column-wise reduction over the rows selected by `mask` (all rows when
    /// `None`). Masked rows are ignored entirely.
    pub fn reduce_rows(&self, mode: Reduce, mask: Option<&[bool]>) -> Result<Vec<T>, TensorError> {
        let selected: Vec<usize> = match mask {
            Some(m) => {
                if m.len() != self.rows {
                    return Err(TensorError::Shape {
                        op: "reduce_rows",
                        left: self.shape(),
                        right: (m.len(), 1),
                    });
                }
                (0..self.rows).filter(|&r| m[r]).collect()
            }
            None => (0..self.rows).collect(),
        };
        if selected.is_empty() {
            return Err(TensorError::EmptyMask { op: "reduce_rows" });
        }
        let mut out = self.row(selected[0]).to_vec();
        for &r in &selected[1..] {
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o = match mode {
                    Reduce::Max => o.max(x),
                    Reduce::Mean => *o + x,
                };
            }
        }
        if mode == Reduce::Mean {
            let n = T::of(selected.len() as f64);
            out.iter_mut().for_each(|o| *o = *o / n);
        }
        Ok(out)
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self, TensorError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        for p in parts {
            if p.rows != rows {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
        }
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                out.row_mut(r)[off..off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        Ok(out)
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self, TensorError> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Frobenius inner product accumulated in f64.
    pub fn dot(&self, b: &Self) -> f64 {
        self.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| x.as_f64() * y.as_f64())
            .sum()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Branch on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T], key_mask: Option<&[bool]>) {
    let valid = |j: usize| key_mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if valid(j) && x > max {
            max = x;
        }
    }
    let mut sum = T::zero();
    for (j, x) in row.iter_mut().enumerate() {
        if valid(j) {
            *x = (*x - max).exp();
            sum = sum + *x;
        } else {
            *x = T::zero();
        }
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

pub(crate) fn gemm_nn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, c: &mut Matrix<T>, alpha: T, beta: T) {
    debug_assert_eq!((a.rows, b.cols), c.shape());
    T::gemm(
        a.rows,
        a.cols,
        b.cols,
        alpha,
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        b.cols as isize,
        1,
        beta,
        &mut c.data,
    );
}

pub(crate) fn gemm_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, c: &mut Matrix<T>, alpha: T, beta: T) {
    debug_assert_eq!((a.rows, b.rows), c.shape());
    T::gemm(
        a.rows,
        a.cols,
        b.rows,
        alpha,
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        1,
        b.cols as isize,
        beta,
        &mut c.data,
    );
}

pub(crate) fn gemm_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, c: &mut Matrix<T>, alpha: T, beta: T) {
    debug_assert_eq!((a.cols, b.cols), c.shape());
    T::gemm(
        a.cols,
        a.rows,
        b.cols,
        alpha,
        &a.data,
        1,
        a.cols as isize,
        &b.data,
        b.cols as isize,
        1,
        beta,
        &mut c.data,
    );
}

/// Cosine similarity accumulated in f64. Zero-norm inputs yield 0 and log a
/// warning.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.as_f64(), b.as_f64());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine similarity of a zero-norm vector; returning 0");
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

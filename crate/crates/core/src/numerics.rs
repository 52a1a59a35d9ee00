//! Dense vectors, row-major matrices and the activation primitives shared by
//! the recurrent model and the baselines.
//!
//! Everything here is `f64`. The hot paths in `lstm` work on raw slices
//! through [`gemv_acc`] and friends; the checked wrappers are for the public
//! surface.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {op} got {left} and {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("empty vector")]
    Empty,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// Finite, non-empty column of `f64` values.
#[derive(Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, NumericsError> {
        if values.is_empty() {
            return Err(NumericsError::Empty);
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    /// Wraps values without validation. Callers guarantee finiteness.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = NumericsError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, NumericsError> {
        if rows * cols != values.len() {
            return Err(NumericsError::Shape {
                op: "matrix",
                left: format!("{rows}x{cols}"),
                right: format!("{} values", values.len()),
            });
        }
        check_finite(&values)?;
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(NumericsError::Shape {
                op: "matrix rows",
                left: format!("{cols} columns"),
                right: format!("{} columns", bad.len()),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list()
            .entries((0..self.rows).map(|r| self.row(r)))
            .finish()
    }
}

fn check_finite(values: &[f64]) -> Result<(), NumericsError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(NumericsError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Logistic function, evaluated without overflowing `exp` for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `W x + b`.
pub fn affine(w: &Matrix, x: &Vector, b: &Vector) -> Result<Vector, NumericsError> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(NumericsError::Shape {
            op: "affine",
            left: format!("W {}x{}", w.rows, w.cols),
            right: format!("x[{}], b[{}]", x.len(), b.len()),
        });
    }
    let mut out = b.as_slice().to_vec();
    gemv_acc(w.as_slice(), w.cols, x.as_slice(), &mut out);
    Ok(Vector(out))
}

pub fn elementwise(kind: Activation, v: &Vector) -> Vector {
    Vector(v.iter().map(|&x| kind.apply(x)).collect())
}

/// Softmax with max-subtraction; shift invariant and overflow free.
pub fn stable_softmax(logits: &Vector) -> Vector {
    let mut out = logits.as_slice().to_vec();
    softmax_in_place(&mut out);
    Vector(out)
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x` for a row-major `W` with `cols` columns.
#[inline]
pub(crate) fn gemv_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ v`.
#[inline]
pub(crate) fn gemv_t_acc(w: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    for (&scale, row) in v.iter().zip(w.chunks_exact(cols)) {
        if scale != 0.0 {
            axpy(scale, row, out);
        }
    }
}

/// `W += v xᵀ`.
#[inline]
pub(crate) fn outer_acc(w: &mut [f64], cols: usize, v: &[f64], x: &[f64]) {
    for (&scale, row) in v.iter().zip(w.chunks_exact_mut(cols)) {
        if scale != 0.0 {
            axpy(scale, x, row);
        }
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

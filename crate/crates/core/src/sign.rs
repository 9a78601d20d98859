//! Sign patterns, absolute vectors and induced matrix norms.
//!
//! Everything here is small dense linear algebra on `m <= 16` dimensional
//! objects. The sign convention is `sign(0) = +1` throughout; every
//! tie-break further down the crate inherits it.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest dimension for which sign patterns are enumerated.
pub const MAX_DIM: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("dimension {0} outside 1..={MAX_DIM}")]
    DimensionOutOfRange(usize),
    #[error("two-norm requires a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// A diagonal matrix with entries in {-1, +1}, stored as `m` bits.
///
/// Bit `i` set means diagonal entry `i` is `+1`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignPattern {
    bits: u16,
    dim: u8,
}

impl SignPattern {
    pub fn new(bits: u16, dim: usize) -> Result<Self, AlgebraError> {
        check_dim(dim)?;
        Ok(Self {
            bits: bits & mask(dim),
            dim: dim as u8,
        })
    }

    pub fn identity(dim: usize) -> Result<Self, AlgebraError> {
        Self::new(u16::MAX, dim)
    }

    pub fn from_signs(signs: &[f64]) -> Result<Self, AlgebraError> {
        check_dim(signs.len())?;
        let bits = signs
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= 0.0)
            .fold(0u16, |acc, (i, _)| acc | (1 << i));
        Self::new(bits, signs.len())
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn bits(&self) -> u16 {
        self.bits
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.bits & (1 << i) != 0
    }

    /// Diagonal entry `i` as a float.
    pub fn sign(&self, i: usize) -> f64 {
        if self.is_positive(i) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn signs(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.sign(i)).collect()
    }

    pub fn flip(&self, i: usize) -> Self {
        Self {
            bits: self.bits ^ (1 << i),
            dim: self.dim,
        }
    }

    pub fn negate(&self) -> Self {
        Self {
            bits: !self.bits & mask(self.dim()),
            dim: self.dim,
        }
    }

    /// `S x`.
    pub fn apply(&self, x: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.dim());
        Vector::from_fn(x.len(), |i, _| self.sign(i) * x[i])
    }

    /// `S A`: flips the sign of every row `i` with a `-1` diagonal entry.
    pub fn apply_rows(&self, a: &Matrix) -> Matrix {
        debug_assert_eq!(a.nrows(), self.dim());
        Matrix::from_fn(a.nrows(), a.ncols(), |i, j| self.sign(i) * a[(i, j)])
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&Vector::from_vec(self.signs()))
    }
}

impl fmt::Debug for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "diag(")?;
        for i in 0..self.dim() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", if self.is_positive(i) { '+' } else { '-' })?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for SignPattern {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.signs().into_iter().map(|s| s as i8))
    }
}

fn mask(dim: usize) -> u16 {
    if dim >= 16 {
        u16::MAX
    } else {
        (1u16 << dim) - 1
    }
}

fn check_dim(dim: usize) -> Result<(), AlgebraError> {
    if (1..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(AlgebraError::DimensionOutOfRange(dim))
    }
}

pub fn sign(value: f64) -> f64 {
    if value >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `S(x) = diag(sign(x_i))`.
pub fn sign_matrix(x: &Vector) -> Result<SignPattern, AlgebraError> {
    SignPattern::from_signs(x.as_slice())
}

pub fn abs_vector(x: &Vector) -> Vector {
    x.abs()
}

/// All `2^m` patterns, ordered by binary counting where a set bit in the
/// counter marks a `-1` entry. The first pattern is the identity.
pub fn enumerate_sign_patterns(dim: usize) -> Result<Vec<SignPattern>, AlgebraError> {
    check_dim(dim)?;
    let full = mask(dim);
    Ok((0..(1u32 << dim))
        .map(|k| SignPattern {
            bits: !(k as u16) & full,
            dim: dim as u8,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    One,
    Two,
    Infinity,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::One, NormKind::Two, NormKind::Infinity];

    pub fn name(&self) -> &'static str {
        match self {
            NormKind::One => "one",
            NormKind::Two => "two",
            NormKind::Infinity => "infinity",
        }
    }
}

/// Induced matrix norm.
///
/// `One` is the max absolute column sum and `Infinity` the max absolute row
/// sum; both accept rectangular input. `Two` is the largest singular value,
/// taken as the square root of the top eigenvalue of `AᵀA`.
pub fn induced_norm(a: &Matrix, kind: NormKind) -> Result<f64, AlgebraError> {
    match kind {
        NormKind::One => Ok(a
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        NormKind::Infinity => Ok(a
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        NormKind::Two => {
            if a.nrows() != a.ncols() {
                return Err(AlgebraError::NotSquare {
                    rows: a.nrows(),
                    cols: a.ncols(),
                });
            }
            Ok(spectral_norm(a))
        }
    }
}

fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.transpose() * a;
    let top = gram
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    top.max(0.0).sqrt()
}

pub fn vector_inf_norm(x: &Vector) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn matrix_max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn is_finite_matrix(a: &Matrix) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn is_finite_vector(x: &Vector) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Relative pivot threshold under which a factorization is treated as singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-13;

/// Solves `A x = b` by LU with partial pivoting. Returns `None` when a pivot
/// falls below `SINGULAR_PIVOT_RTOL` relative to the largest entry of `A`.
pub fn lu_solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    let scale = matrix_max_abs(a);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let lu = a.clone().lu();
    let u = lu.u();
    if u.diagonal().iter().any(|p| p.abs() <= SINGULAR_PIVOT_RTOL * scale) {
        return None;
    }
    lu.solve(b)
}

pub fn lu_inverse(a: &Matrix) -> Option<Matrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return None;
    }
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = 1.0;
        let col = lu_solve(a, &e)?;
        inv.set_column(j, &col);
    }
    Some(inv)
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(a: &Matrix) -> f64 {
    if a.nrows() != a.ncols() || a.is_empty() {
        return f64::INFINITY;
    }
    let sv = a.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Builds a matrix from row-major nested rows; `None` when rows are ragged.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

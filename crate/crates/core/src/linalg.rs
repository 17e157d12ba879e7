//! Small dense helpers shared by the tower and form code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

pub fn to_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest and smallest singular values of a square matrix.
pub fn singular_extremes(m: &Matrix) -> (f64, f64) {
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min)
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Direct-sum of canonical 2x2 blocks `[[0, 1], [-1, 0]]`.
pub fn canonical_form(dim: usize) -> Result<Matrix> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::DomainError(format!(
            "canonical symplectic form needs a positive even dimension, got {dim}"
        )));
    }
    let mut s = Matrix::zeros(dim, dim);
    for b in 0..dim / 2 {
        s[(2 * b, 2 * b + 1)] = 1.0;
        s[(2 * b + 1, 2 * b)] = -1.0;
    }
    Ok(s)
}

/// Row-major 2D nested list, used by JSON views.
pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

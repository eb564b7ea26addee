//! Dense complex matrix helpers shared by the forward and inverse modules.
//!
//! Graphs here are small (a handful of vertices), so everything is dense and
//! every inverse goes through a pivoted LU factorisation followed by a
//! 1-norm condition estimate.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Refuse inverses whose 1-norm condition number exceeds this.
pub const CONDITION_CAP: f64 = 1e14;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn diag(values: &[Complex64]) -> CMatrix {
    let mut m = CMatrix::zeros(values.len(), values.len());
    for (i, v) in values.iter().enumerate() {
        m[(i, i)] = *v;
    }
    m
}

pub fn norm1(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn op_norm(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of the Hermitian part `(a + a*)/2`.
pub fn min_hermitian_eigenvalue(a: &CMatrix) -> f64 {
    let h = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse with a 1-norm condition check against [`CONDITION_CAP`].
pub fn invert(a: &CMatrix) -> Result<CMatrix> {
    invert_capped(a, CONDITION_CAP)
}

pub fn invert_capped(a: &CMatrix, cap: f64) -> Result<CMatrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "cannot invert {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.is_empty() {
        return Ok(a.clone());
    }
    let inv = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularMatrix { cond: f64::INFINITY })?;
    let cond = norm1(a) * norm1(&inv);
    if !cond.is_finite() || cond > cap {
        return Err(Error::SingularMatrix { cond });
    }
    Ok(inv)
}

/// Restrict `a` to the rows and columns listed in `indices`.
pub fn submatrix(a: &CMatrix, indices: &[usize]) -> CMatrix {
    CMatrix::from_fn(indices.len(), indices.len(), |r, c| a[(indices[r], indices[c])])
}

/// Max-abs entrywise difference.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Row-major `[re, im]` pairs, the JSON layout used for matrices.
pub fn to_pairs(a: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| [a[(r, c)].re, a[(r, c)].im]).collect())
        .collect()
}

pub fn from_pairs(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(n, m, |r, c| {
        Complex64::new(rows[r][c][0], rows[r][c][1])
    }))
}

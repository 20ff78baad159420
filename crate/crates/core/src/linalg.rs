//! Row-major dense matrix used across the crate, with the few factorizations
//! the estimators need delegated to nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                what: "matrix product inner dimension",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "matrix-vector product",
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_dm(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows, a.cols, &a.data)
}

fn from_dm(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn check_square(a: &Matrix, what: &'static str) -> Result<()> {
    if a.cols() != a.rows() {
        return Err(Error::DimensionMismatch {
            what,
            expected: a.rows(),
            got: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// First pivot at which the leading block stops being positive definite.
fn failing_pivot(a: &DMatrix<f64>) -> usize {
    (1..=a.nrows())
        .find(|&k| Cholesky::new(a.view((0, 0), (k, k)).into_owned()).is_none())
        .map_or(a.nrows(), |k| k - 1)
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = a`.
///
/// Only the lower triangle of `a` is read. Fails with the index of the first
/// non-positive pivot.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    check_square(a, "cholesky input")?;
    let m = to_dm(a);
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(from_dm(&c.l())),
        None => Err(Error::NotPositiveDefinite { pivot: failing_pivot(&m) }),
    }
}

/// Least-squares solve of `design · β ≈ response` by Householder QR.
///
/// A column whose component orthogonal to the preceding columns is below
/// `1e-10` of its own norm is reported as rank deficient.
pub fn least_squares(design: &Matrix, response: &[f64]) -> Result<Vec<f64>> {
    let (m, p) = (design.rows(), design.cols());
    if response.len() != m {
        return Err(Error::DimensionMismatch {
            what: "response length vs design rows",
            expected: m,
            got: response.len(),
        });
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    if m < p {
        return Err(Error::RankDeficient { column: m });
    }
    if !design.is_finite() || response.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input"));
    }
    let x = to_dm(design);
    let qr = x.clone().qr();
    let r = qr.r();
    for k in 0..p {
        let norm = x.column(k).norm();
        if norm == 0.0 || r[(k, k)].abs() <= 1e-10 * norm {
            return Err(Error::RankDeficient { column: k });
        }
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(response);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { column: p - 1 })?;
    Ok(beta.iter().copied().collect())
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    check_square(a, "spd inverse input")?;
    let m = to_dm(a);
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(from_dm(&c.inverse())),
        None => Err(Error::NotPositiveDefinite { pivot: failing_pivot(&m) }),
    }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(a: &Matrix) -> f64 {
    if a.rows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(to_dm(a)).eigenvalues.max()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_diagonal() {
        let a = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l, Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap());
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap();
        match cholesky(&a) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn least_squares_flags_dependent_column() {
        let x = Matrix::from_fn(5, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64 + 3.0,
        });
        match least_squares(&x, &[1.0, 2.0, 3.0, 4.0, 6.0]) {
            Err(Error::RankDeficient { column }) => assert_eq!(column, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn max_eigenvalue_of_known_matrix() {
        // eigenvalues 1 and 3
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((sym_max_eigenvalue(&a) - 3.0).abs() < 1e-12);
        let d = Matrix::from_rows(&[vec![5.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(sym_max_eigenvalue(&d), 5.0);
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let inv = spd_inverse(&a).unwrap();
        let prod = a.matmul(&inv).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(2)) < 1e-14);
    }
}

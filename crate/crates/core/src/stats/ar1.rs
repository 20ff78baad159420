//! AR(1) error structure: covariance construction and its Cholesky factor.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Marginal variance and lag-1 correlation of a stationary AR(1) error
/// process. Lag-k correlation is `rho^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1ErrorSpec {
    sigma2: f64,
    rho: f64,
}

impl Ar1ErrorSpec {
    pub fn new(sigma2: f64, rho: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive and finite, got {sigma2}"
            )));
        }
        check_rho(rho)?;
        Ok(Ar1ErrorSpec { sigma2, rho })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn with_rho(self, rho: f64) -> Result<Self> {
        Self::new(self.sigma2, rho)
    }

    pub fn with_sigma2(self, sigma2: f64) -> Result<Self> {
        Self::new(sigma2, self.rho)
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!(
            "rho must lie in [0, 1), got {rho}"
        )));
    }
    Ok(())
}

/// Symmetric positive definite covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(Matrix);

impl CovMatrix {
    /// Wraps `m`, checking symmetry to 1e-12 (relative to the largest entry).
    /// Positive definiteness is checked lazily by [`cholesky`].
    pub fn new(m: Matrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::DimensionMismatch {
                what: "covariance must be square",
                expected: n,
                got: m.cols(),
            });
        }
        let scale = m.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(CovMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Lower-triangular factor used to colour standard normal draws.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor(Matrix);

impl CholeskyFactor {
    /// Wraps an arbitrary lower-triangular matrix. Entries above the diagonal
    /// must be zero. A zero factor is allowed and gives degenerate draws.
    pub fn from_lower(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                what: "factor must be square",
                expected: m.rows(),
                got: m.cols(),
            });
        }
        for i in 0..m.rows() {
            for j in i + 1..m.cols() {
                if m[(i, j)] != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "factor has a nonzero entry above the diagonal at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(CholeskyFactor(m))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// `L·z` using only the lower triangle.
    pub(crate) fn apply(&self, z: &[f64], out: &mut [f64]) {
        let l = &self.0;
        for (i, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(&l.row(i)[..=i], &z[..=i]);
        }
    }
}

/// `sigma2 · rho^|i−j|` for `i, j < n_times`.
pub fn build_ar1_cov(n_times: usize, spec: &Ar1ErrorSpec) -> Result<CovMatrix> {
    if n_times == 0 {
        return Err(Error::InvalidParameter("n_times must be at least 1".into()));
    }
    let m = Matrix::from_fn(n_times, n_times, |i, j| {
        spec.sigma2 * spec.rho.powi(i.abs_diff(j) as i32)
    });
    Ok(CovMatrix(m))
}

pub fn cholesky(cov: &CovMatrix) -> Result<CholeskyFactor> {
    linalg::cholesky(&cov.0).map(CholeskyFactor)
}

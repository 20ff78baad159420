use crate::error::Result;
use crate::linalg::{least_squares, Matrix};

/// Ordinary least squares coefficients of `response` on the columns of
/// `design`. Rank deficiency is reported with the first dependent column.
pub fn ols_fit(design: &Matrix, response: &[f64]) -> Result<Vec<f64>> {
    least_squares(design, response)
}

/// Intercept and slope of `y` regressed on `t`.
pub fn linear_trend(t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let design = Matrix::from_fn(t.len(), 2, |i, j| if j == 0 { 1.0 } else { t[i] });
    let beta = least_squares(&design, y)?;
    Ok((beta[0], beta[1]))
}

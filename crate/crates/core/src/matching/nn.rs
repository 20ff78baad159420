//! One-to-one nearest-neighbour matching. Ties go to the lowest control index.

use super::{ControlWeights, WeightTag};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::stats::linear_trend;

/// Which OLS trend coefficients enter the L1 distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrendDistance {
    InterceptAndSlope,
    /// Matches on trend alone; the intercept mostly carries the unit's level.
    #[default]
    SlopeOnly,
}

fn check_inputs(treated_pre: &[f64], control_pre: &Matrix) -> Result<()> {
    if control_pre.cols() == 0 {
        return Err(Error::InvalidParameter("empty control set".into()));
    }
    if treated_pre.len() != control_pre.rows() {
        return Err(Error::DimensionMismatch {
            what: "treated rows vs control rows",
            expected: control_pre.rows(),
            got: treated_pre.len(),
        });
    }
    if !control_pre.is_finite() || treated_pre.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matching input"));
    }
    Ok(())
}

/// First index of the minimum; `NaN` never wins.
pub(crate) fn argmin(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Euclidean distance from `treated_pre` to each column of `control_pre`.
pub fn l2_distances(treated_pre: &[f64], control_pre: &Matrix) -> Result<Vec<f64>> {
    check_inputs(treated_pre, control_pre)?;
    Ok((0..control_pre.cols())
        .map(|k| {
            treated_pre
                .iter()
                .enumerate()
                .map(|(j, t)| (t - control_pre[(j, k)]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Control closest in Euclidean distance over the pre-treatment outcomes.
/// `control_pre` is `time × control`.
pub fn nn_l2(treated_pre: &[f64], control_pre: &Matrix) -> Result<ControlWeights> {
    let d = l2_distances(treated_pre, control_pre)?;
    let k = argmin(d).expect("nonempty");
    ControlWeights::one_hot(control_pre.cols(), k, WeightTag::NnL2)
}

/// Intercept and slope of `series` regressed on `time_index`.
pub fn trend_coefficients(series: &[f64], time_index: &[f64]) -> Result<(f64, f64)> {
    if time_index.len() < 2 {
        return Err(Error::InsufficientData(
            "trend matching needs at least two pre-treatment periods".into(),
        ));
    }
    if time_index.iter().all(|&t| t == time_index[0]) {
        return Err(Error::InvalidParameter("degenerate time vector (all equal)".into()));
    }
    linear_trend(time_index, series)
}

pub(crate) fn trend_distance(a: (f64, f64), b: (f64, f64), kind: TrendDistance) -> f64 {
    match kind {
        TrendDistance::InterceptAndSlope => (a.0 - b.0).abs() + (a.1 - b.1).abs(),
        TrendDistance::SlopeOnly => (a.1 - b.1).abs(),
    }
}

/// Control whose pre-treatment OLS trend is closest in L1 distance.
pub fn nn_trend(
    treated_pre: &[f64],
    control_pre: &Matrix,
    time_index: &[f64],
    distance: TrendDistance,
) -> Result<ControlWeights> {
    check_inputs(treated_pre, control_pre)?;
    if time_index.len() != treated_pre.len() {
        return Err(Error::DimensionMismatch {
            what: "time index vs pre-treatment rows",
            expected: treated_pre.len(),
            got: time_index.len(),
        });
    }
    let target = trend_coefficients(treated_pre, time_index)?;
    let mut dists = Vec::with_capacity(control_pre.cols());
    for k in 0..control_pre.cols() {
        let c = trend_coefficients(&control_pre.column(k), time_index)?;
        dists.push(trend_distance(target, c, distance));
    }
    let k = argmin(dists).expect("nonempty");
    ControlWeights::one_hot(control_pre.cols(), k, WeightTag::NnTrend)
}

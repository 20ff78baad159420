//! Per-unit expected untreated outcome as a function of time.

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::panel::Panel;

use super::ols::linear_trend;

#[derive(Debug, Clone, PartialEq)]
pub enum MeanKind {
    /// `μ_i(t) = level_i`.
    Constant { levels: Vec<f64> },
    /// `μ_i(t) = intercept_i + slope_i · time_t`, with `time_t` the panel's
    /// time label.
    Linear {
        intercepts: Vec<f64>,
        slopes: Vec<f64>,
        time_values: Vec<f64>,
    },
    /// `μ_i(t) = x_{it}·β` with the stored design rows.
    Fitted {
        terms: Vec<String>,
        coefficients: Vec<f64>,
        /// Row-major `[unit][time][term]`.
        design: Vec<f64>,
    },
}

/// Evaluable at every (unit, time index) of the panel it was built for.
/// Each unit carries an additive shift (zero unless set by [`MeanModel::shifted`]).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    kind: MeanKind,
    n_units: usize,
    n_times: usize,
    shifts: Vec<f64>,
}

impl MeanModel {
    pub fn constant(levels: Vec<f64>, n_times: usize) -> Result<Self> {
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean levels"));
        }
        let n_units = levels.len();
        Ok(Self::from_kind(MeanKind::Constant { levels }, n_units, n_times))
    }

    pub fn linear(intercepts: Vec<f64>, slopes: Vec<f64>, time_values: Vec<f64>) -> Result<Self> {
        if intercepts.len() != slopes.len() {
            return Err(Error::DimensionMismatch {
                what: "slopes vs intercepts",
                expected: intercepts.len(),
                got: slopes.len(),
            });
        }
        if intercepts.iter().chain(&slopes).chain(&time_values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear mean model"));
        }
        let (n_units, n_times) = (intercepts.len(), time_values.len());
        Ok(Self::from_kind(
            MeanKind::Linear {
                intercepts,
                slopes,
                time_values,
            },
            n_units,
            n_times,
        ))
    }

    pub fn fitted(
        terms: Vec<String>,
        coefficients: Vec<f64>,
        design: Vec<f64>,
        n_units: usize,
        n_times: usize,
    ) -> Result<Self> {
        let p = coefficients.len();
        if terms.len() != p {
            return Err(Error::DimensionMismatch {
                what: "term names vs coefficients",
                expected: p,
                got: terms.len(),
            });
        }
        if design.len() != n_units * n_times * p {
            return Err(Error::DimensionMismatch {
                what: "stored design size",
                expected: n_units * n_times * p,
                got: design.len(),
            });
        }
        Ok(Self::from_kind(
            MeanKind::Fitted {
                terms,
                coefficients,
                design,
            },
            n_units,
            n_times,
        ))
    }

    fn from_kind(kind: MeanKind, n_units: usize, n_times: usize) -> Self {
        MeanModel {
            kind,
            n_units,
            n_times,
            shifts: vec![0.0; n_units],
        }
    }

    /// Each unit's mean of its pre-treatment outcomes, constant in time.
    pub fn from_pre_means(panel: &Panel) -> Result<Self> {
        let tau0 = panel.tau0();
        let levels = (0..panel.n_units())
            .map(|u| panel.series(u)[..tau0].iter().sum::<f64>() / tau0 as f64)
            .collect();
        Self::constant(levels, panel.n_times())
    }

    /// Each unit's OLS line through its pre-treatment outcomes.
    pub fn from_pre_trends(panel: &Panel) -> Result<Self> {
        let tau0 = panel.tau0();
        let tv: Vec<f64> = panel.times().iter().map(|&t| t as f64).collect();
        let mut intercepts = Vec::with_capacity(panel.n_units());
        let mut slopes = Vec::with_capacity(panel.n_units());
        for u in 0..panel.n_units() {
            let (a, b) = linear_trend(&tv[..tau0], &panel.series(u)[..tau0])?;
            intercepts.push(a);
            slopes.push(b);
        }
        Self::linear(intercepts, slopes, tv)
    }

    pub fn kind(&self) -> &MeanKind {
        &self.kind
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn shift(&self, unit: usize) -> f64 {
        self.shifts[unit]
    }

    /// Copy with `delta` added to `unit`'s mean at every time.
    pub fn shifted(&self, unit: usize, delta: f64) -> Result<Self> {
        self.check_unit(unit)?;
        let mut m = self.clone();
        m.shifts[unit] += delta;
        Ok(m)
    }

    pub fn check_unit(&self, unit: usize) -> Result<()> {
        if unit >= self.n_units {
            return Err(Error::InvalidParameter(format!(
                "mean model covers {} units, unit {unit} requested",
                self.n_units
            )));
        }
        Ok(())
    }

    /// Checks that the model covers a panel's shape.
    pub fn check_covers(&self, panel: &Panel) -> Result<()> {
        if self.n_units < panel.n_units() || self.n_times != panel.n_times() {
            return Err(Error::InvalidParameter(format!(
                "mean model is {}x{} but panel is {}x{}",
                self.n_units,
                self.n_times,
                panel.n_units(),
                panel.n_times()
            )));
        }
        Ok(())
    }

    /// Expected untreated outcome of `unit` at time index `t`.
    pub fn evaluate(&self, unit: usize, t: usize) -> f64 {
        let base = match &self.kind {
            MeanKind::Constant { levels } => levels[unit],
            MeanKind::Linear {
                intercepts,
                slopes,
                time_values,
            } => intercepts[unit] + slopes[unit] * time_values[t],
            MeanKind::Fitted {
                coefficients,
                design,
                ..
            } => {
                let p = coefficients.len();
                let off = (unit * self.n_times + t) * p;
                dot(&design[off..off + p], coefficients)
            }
        };
        base + self.shifts[unit]
    }

    pub fn unit_path(&self, unit: usize) -> Result<Vec<f64>> {
        self.check_unit(unit)?;
        Ok((0..self.n_times).map(|t| self.evaluate(unit, t)).collect())
    }
}

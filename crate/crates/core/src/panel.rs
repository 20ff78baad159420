//! Rectangular unit × time panel with one treated unit.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A named unit × time covariate. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: Matrix,
}

/// Outcomes for `n_units` units over `n_times` periods. The first `tau0`
/// periods are pre-treatment; periods `tau0..n_times` are post-treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    outcomes: Matrix,
    unit_ids: Vec<String>,
    times: Vec<i64>,
    treated: usize,
    tau0: usize,
    covariates: Vec<Covariate>,
}

impl Panel {
    pub fn new(
        outcomes: Matrix,
        unit_ids: Vec<String>,
        times: Vec<i64>,
        treated: usize,
        tau0: usize,
    ) -> Result<Self> {
        let (n, t) = (outcomes.rows(), outcomes.cols());
        if unit_ids.len() != n {
            return Err(Error::DimensionMismatch {
                what: "unit ids vs outcome rows",
                expected: n,
                got: unit_ids.len(),
            });
        }
        if times.len() != t {
            return Err(Error::DimensionMismatch {
                what: "time labels vs outcome columns",
                expected: t,
                got: times.len(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidParameter(
                "panel needs a treated unit and at least one control".into(),
            ));
        }
        if treated >= n {
            return Err(Error::InvalidParameter(format!(
                "treated index {treated} out of range for {n} units"
            )));
        }
        if tau0 < 1 || tau0 >= t {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= tau0 < n_times, got tau0 = {tau0} with {t} periods"
            )));
        }
        if !outcomes.is_finite() {
            return Err(Error::NonFinite("panel outcomes"));
        }
        Ok(Panel {
            outcomes,
            unit_ids,
            times,
            treated,
            tau0,
            covariates: Vec::new(),
        })
    }

    /// Panel with default labels: units `u0, u1, ...` and times `1..=n_times`.
    pub fn from_outcomes(outcomes: Matrix, treated: usize, tau0: usize) -> Result<Self> {
        let ids = (0..outcomes.rows()).map(|i| format!("u{i}")).collect();
        let times = (1..=outcomes.cols() as i64).collect();
        Self::new(outcomes, ids, times, treated, tau0)
    }

    pub fn with_covariate(mut self, name: impl Into<String>, values: Matrix) -> Result<Self> {
        if values.rows() != self.n_units() || values.cols() != self.n_times() {
            return Err(Error::DimensionMismatch {
                what: "covariate shape",
                expected: self.n_units() * self.n_times(),
                got: values.rows() * values.cols(),
            });
        }
        let name = name.into();
        if self.covariate(&name).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate covariate `{name}`")));
        }
        self.covariates.push(Covariate { name, values });
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.rows()
    }

    pub fn n_times(&self) -> usize {
        self.outcomes.cols()
    }

    pub fn tau0(&self) -> usize {
        self.tau0
    }

    pub fn n_post(&self) -> usize {
        self.n_times() - self.tau0
    }

    pub fn treated(&self) -> usize {
        self.treated
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == id)
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn time_index(&self, time: i64) -> Option<usize> {
        self.times.iter().position(|&t| t == time)
    }

    pub fn outcomes(&self) -> &Matrix {
        &self.outcomes
    }

    #[inline]
    pub fn series(&self, unit: usize) -> &[f64] {
        self.outcomes.row(unit)
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    /// Unit indices other than the treated one, in ascending order.
    pub fn controls(&self) -> Vec<usize> {
        controls_of(self.n_units(), self.treated)
    }

    /// Same data with `unit` as the treated unit.
    pub fn relabelled(&self, unit: usize) -> Result<Panel> {
        if unit >= self.n_units() {
            return Err(Error::InvalidParameter(format!("unit {unit} out of range")));
        }
        let mut p = self.clone();
        p.treated = unit;
        Ok(p)
    }

    /// Applies `f` to every outcome (covariates untouched).
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Panel> {
        let outcomes = Matrix::from_fn(self.n_units(), self.n_times(), |i, j| {
            f(self.outcomes[(i, j)])
        });
        let mut p = Panel::new(
            outcomes,
            self.unit_ids.clone(),
            self.times.clone(),
            self.treated,
            self.tau0,
        )?;
        p.covariates = self.covariates.clone();
        Ok(p)
    }

    /// Reorders units; `order[k]` is the old index of the unit placed at `k`.
    pub fn permute_units(&self, order: &[usize]) -> Result<Panel> {
        let n = self.n_units();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidParameter("order is not a permutation".into()));
        }
        let t = self.n_times();
        let outcomes = Matrix::from_fn(n, t, |i, j| self.outcomes[(order[i], j)]);
        let ids = order.iter().map(|&i| self.unit_ids[i].clone()).collect();
        let treated = order.iter().position(|&i| i == self.treated).unwrap();
        let mut p = Panel::new(outcomes, ids, self.times.clone(), treated, self.tau0)?;
        p.covariates = self
            .covariates
            .iter()
            .map(|c| Covariate {
                name: c.name.clone(),
                values: Matrix::from_fn(n, t, |i, j| c.values[(order[i], j)]),
            })
            .collect();
        Ok(p)
    }
}

pub(crate) fn controls_of(n_units: usize, treated: usize) -> Vec<usize> {
    (0..n_units).filter(|&i| i != treated).collect()
}

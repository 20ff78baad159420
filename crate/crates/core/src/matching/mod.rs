//! Control weights from pre-treatment data.

pub(crate) mod nn;
mod synth;

pub use nn::{l2_distances, nn_l2, nn_trend, trend_coefficients, TrendDistance};
pub use synth::{fit_synthetic_control, project_to_simplex, FitReport, SC_MAX_ITER, SC_STALL_ITERS, SC_STALL_TOL};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightTag {
    Synthetic,
    NnL2,
    NnTrend,
    Uniform,
}

impl WeightTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightTag::Synthetic => "synthetic",
            WeightTag::NnL2 => "nn_l2",
            WeightTag::NnTrend => "nn_trend",
            WeightTag::Uniform => "uniform",
        }
    }
}

/// Nonnegative weights over the control units summing to one. Position `k`
/// refers to the `k`-th control in ascending unit order (the treated unit
/// skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlWeights {
    weights: Vec<f64>,
    tag: WeightTag,
}

impl ControlWeights {
    pub fn new(weights: Vec<f64>, tag: WeightTag) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("empty control set".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {s}, expected 1"
            )));
        }
        Ok(ControlWeights { weights, tag })
    }

    pub fn uniform(n_controls: usize) -> Result<Self> {
        if n_controls == 0 {
            return Err(Error::InvalidParameter("empty control set".into()));
        }
        Ok(ControlWeights {
            weights: vec![1.0 / n_controls as f64; n_controls],
            tag: WeightTag::Uniform,
        })
    }

    pub fn one_hot(n_controls: usize, index: usize, tag: WeightTag) -> Result<Self> {
        if index >= n_controls {
            return Err(Error::InvalidParameter(format!(
                "match index {index} out of range for {n_controls} controls"
            )));
        }
        let mut weights = vec![0.0; n_controls];
        weights[index] = 1.0;
        Ok(ControlWeights { weights, tag })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tag(&self) -> WeightTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the matched control for one-hot weights.
    pub fn selected(&self) -> Option<usize> {
        match self.tag {
            WeightTag::NnL2 | WeightTag::NnTrend => self.weights.iter().position(|&w| w == 1.0),
            _ => None,
        }
    }

    /// Weighted combination `Σ_k w_k · column_k(t)` for each `t`, where
    /// `series(k)` returns the `k`-th control's values.
    pub(crate) fn combine<'a>(&self, series: impl Fn(usize) -> &'a [f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (k, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(series(k)) {
                *o += w * v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_validate() {
        assert!(ControlWeights::new(vec![0.5, 0.6], WeightTag::Synthetic).is_err());
        assert!(ControlWeights::new(vec![-0.1, 1.1], WeightTag::Synthetic).is_err());
        assert!(ControlWeights::new(vec![], WeightTag::Synthetic).is_err());
        assert!(ControlWeights::uniform(0).is_err());
        assert!(ControlWeights::one_hot(3, 3, WeightTag::NnL2).is_err());
        let w = ControlWeights::uniform(4).unwrap();
        assert!(w.weights().iter().all(|&x| x == 0.25));
        assert_eq!(ControlWeights::one_hot(3, 1, WeightTag::NnL2).unwrap().selected(), Some(1));
    }
}

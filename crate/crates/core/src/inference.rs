//! Placebo (permutation) inference over unit relabellings.
//!
//! Every unit takes a turn as the treated unit with all others as controls;
//! matching weights are refit from scratch for each relabelling. The p-value
//! is the share of units whose estimate is at least as large in magnitude as
//! the real treated unit's, counting the treated unit itself.

use crate::did::{did_for, theta_rtm_for, RtmAdjustment};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::matching::{
    fit_synthetic_control, nn_l2, trend_coefficients, ControlWeights, TrendDistance, WeightTag,
};
use crate::panel::{controls_of, Panel};

/// Extra fitting rows for synthetic control: one value per unit for each
/// predictor, entering the least-squares fit with its own row weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictors {
    pub names: Vec<String>,
    /// `units × predictors`.
    pub values: Matrix,
    pub row_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    /// Fit on the pre-treatment outcome rows (row weight `outcome_row_weight`).
    pub include_pre_outcomes: bool,
    pub outcome_row_weight: f64,
    pub predictors: Option<Predictors>,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            include_pre_outcomes: true,
            outcome_row_weight: 1.0,
            predictors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchMethod {
    /// Uniform weights over all controls.
    Unmatched,
    Synthetic(SyntheticOptions),
    NnL2,
    /// Trends are fit against the period position `1..=tau0`.
    NnTrend(TrendDistance),
}

impl MatchMethod {
    pub fn synthetic() -> Self {
        MatchMethod::Synthetic(SyntheticOptions::default())
    }

    pub fn label(&self) -> &'static str {
        match self {
            MatchMethod::Unmatched => "unmatched",
            MatchMethod::Synthetic(_) => "sc",
            MatchMethod::NnL2 => "nn1",
            MatchMethod::NnTrend(_) => "nn2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub method: MatchMethod,
    /// RTM correction; `None` for the plain DID.
    pub adjustment: Option<RtmAdjustment>,
}

impl EstimatorConfig {
    pub fn unadjusted(method: MatchMethod) -> Self {
        EstimatorConfig {
            method,
            adjustment: None,
        }
    }
}

/// Per-panel data reused across relabellings.
pub(crate) enum Prepared<'a> {
    Unmatched,
    Synthetic {
        /// `rows × units`: each column is one unit's fitting vector.
        rows: Matrix,
        row_weights: Vec<f64>,
    },
    NnL2(&'a Panel),
    NnTrend {
        coefs: Vec<(f64, f64)>,
        distance: TrendDistance,
    },
}

impl<'a> Prepared<'a> {
    pub(crate) fn new(panel: &'a Panel, method: &MatchMethod) -> Result<Self> {
        let tau0 = panel.tau0();
        Ok(match method {
            MatchMethod::Unmatched => Prepared::Unmatched,
            MatchMethod::NnL2 => Prepared::NnL2(panel),
            MatchMethod::NnTrend(distance) => {
                let ti: Vec<f64> = (1..=tau0).map(|t| t as f64).collect();
                let coefs = (0..panel.n_units())
                    .map(|u| trend_coefficients(&panel.series(u)[..tau0], &ti))
                    .collect::<Result<_>>()?;
                Prepared::NnTrend {
                    coefs,
                    distance: *distance,
                }
            }
            MatchMethod::Synthetic(opts) => {
                let n = panel.n_units();
                let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n];
                let mut row_weights = Vec::new();
                if opts.include_pre_outcomes {
                    for (u, col) in cols.iter_mut().enumerate() {
                        col.extend_from_slice(&panel.series(u)[..tau0]);
                    }
                    row_weights.extend(std::iter::repeat_n(opts.outcome_row_weight, tau0));
                }
                if let Some(p) = &opts.predictors {
                    if p.values.rows() != n {
                        return Err(Error::DimensionMismatch {
                            what: "predictor rows vs units",
                            expected: n,
                            got: p.values.rows(),
                        });
                    }
                    if p.row_weights.len() != p.values.cols() {
                        return Err(Error::DimensionMismatch {
                            what: "predictor weights",
                            expected: p.values.cols(),
                            got: p.row_weights.len(),
                        });
                    }
                    for (u, col) in cols.iter_mut().enumerate() {
                        col.extend_from_slice(p.values.row(u));
                    }
                    row_weights.extend_from_slice(&p.row_weights);
                }
                if row_weights.is_empty() {
                    return Err(Error::InvalidParameter(
                        "synthetic control has no fitting rows".into(),
                    ));
                }
                let m = row_weights.len();
                Prepared::Synthetic {
                    rows: Matrix::from_fn(m, n, |i, u| cols[u][i]),
                    row_weights,
                }
            }
        })
    }

    pub(crate) fn weights_for(&self, n_units: usize, treated: usize) -> Result<ControlWeights> {
        let controls = controls_of(n_units, treated);
        match self {
            Prepared::Unmatched => ControlWeights::uniform(controls.len()),
            Prepared::NnL2(panel) => {
                let tau0 = panel.tau0();
                let c = Matrix::from_fn(tau0, controls.len(), |j, k| panel.series(controls[k])[j]);
                nn_l2(&panel.series(treated)[..tau0], &c)
            }
            Prepared::NnTrend { coefs, distance } => {
                let target = coefs[treated];
                let k = crate::matching::nn::argmin(
                    controls
                        .iter()
                        .map(|&u| crate::matching::nn::trend_distance(target, coefs[u], *distance)),
                )
                .expect("at least one control");
                ControlWeights::one_hot(controls.len(), k, WeightTag::NnTrend)
            }
            Prepared::Synthetic { rows, row_weights } => {
                let a = Matrix::from_fn(rows.rows(), controls.len(), |i, k| rows[(i, controls[k])]);
                let b = rows.column(treated);
                let uniform = row_weights.iter().all(|&w| w == 1.0);
                let rw = if uniform { None } else { Some(row_weights.as_slice()) };
                fit_synthetic_control(&a, &b, rw).map(|(w, _)| w)
            }
        }
    }
}

/// Weights for the panel's treated unit under `method`.
pub fn estimate_weights(panel: &Panel, method: &MatchMethod) -> Result<ControlWeights> {
    Prepared::new(panel, method)?.weights_for(panel.n_units(), panel.treated())
}

pub(crate) fn relabel_error(panel: &Panel, unit: usize, e: Error) -> Error {
    Error::Relabel {
        unit: panel.unit_ids()[unit].clone(),
        source: Box::new(e),
    }
}

/// Weights for every relabelling, index = unit taking the treated role.
pub(crate) fn relabel_weights(
    panel: &Panel,
    method: &MatchMethod,
    exec: Exec,
) -> Result<Vec<ControlWeights>> {
    let prep = Prepared::new(panel, method)?;
    let n = panel.n_units();
    exec.try_map(n, |i| {
        prep.weights_for(n, i).map_err(|e| relabel_error(panel, i, e))
    })
}

/// One estimate per unit (with that unit relabelled as treated) and the
/// permutation p-value of the real treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboDistribution {
    estimates: Vec<f64>,
    treated: usize,
    exceed: usize,
}

impl PlaceboDistribution {
    pub fn from_estimates(estimates: Vec<f64>, treated: usize) -> Result<Self> {
        if estimates.len() < 2 {
            return Err(Error::InsufficientData(
                "placebo test needs at least two units".into(),
            ));
        }
        if treated >= estimates.len() {
            return Err(Error::InvalidParameter(format!(
                "treated index {treated} out of range"
            )));
        }
        if estimates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("placebo estimates"));
        }
        let target = estimates[treated].abs();
        let exceed = estimates.iter().filter(|e| e.abs() >= target).count();
        Ok(PlaceboDistribution {
            estimates,
            treated,
            exceed,
        })
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn treated(&self) -> usize {
        self.treated
    }

    pub fn treated_estimate(&self) -> f64 {
        self.estimates[self.treated]
    }

    /// Number of units.
    pub fn n(&self) -> usize {
        self.estimates.len()
    }

    /// Numerator of the p-value: units with `|θ_i| ≥ |θ_treated|`.
    pub fn exceed_count(&self) -> usize {
        self.exceed
    }

    pub fn p_value(&self) -> f64 {
        self.exceed as f64 / self.n() as f64
    }
}

/// Runs the full estimator with each unit relabelled as treated.
pub fn placebo_test(panel: &Panel, config: &EstimatorConfig, exec: Exec) -> Result<PlaceboDistribution> {
    let weights = relabel_weights(panel, &config.method, exec)?;
    let estimates = exec.try_map(panel.n_units(), |i| {
        let obs = did_for(panel, i, &weights[i]);
        match &config.adjustment {
            None => Ok(obs),
            Some(adj) => theta_rtm_for(panel, i, &weights[i], adj, 0.0)
                .map(|rtm| obs - rtm)
                .map_err(|e| relabel_error(panel, i, e)),
        }
    })?;
    PlaceboDistribution::from_estimates(estimates, panel.treated())
}

/// Rejects when the p-value is strictly below `alpha`.
pub fn reject_null(dist: &PlaceboDistribution, alpha: f64) -> Result<bool> {
    check_alpha(alpha)?;
    Ok(dist.p_value() < alpha)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_ties_give_p_one() {
        let d = PlaceboDistribution::from_estimates(vec![2.0, -2.0, 2.0, -2.0], 1).unwrap();
        assert_eq!(d.p_value(), 1.0);
    }

    #[test]
    fn extreme_treated_gives_one_over_n() {
        let mut est: Vec<f64> = (0..41).map(|i| i as f64 * 0.01).collect();
        est[7] = -5.0;
        let d = PlaceboDistribution::from_estimates(est, 7).unwrap();
        assert_eq!(d.exceed_count(), 1);
        assert_eq!(d.p_value(), 1.0 / 41.0);
    }

    #[test]
    fn strict_rejection_rule() {
        let mut est = vec![0.0; 41];
        est[0] = 10.0;
        est[1] = 11.0;
        let d = PlaceboDistribution::from_estimates(est, 0).unwrap();
        assert_eq!(d.p_value(), 2.0 / 41.0);
        assert!(reject_null(&d, 0.05).unwrap());

        let mut est = vec![0.0; 20];
        est[0] = 1.0;
        let d = PlaceboDistribution::from_estimates(est, 0).unwrap();
        assert_eq!(d.p_value(), 0.05);
        assert!(!reject_null(&d, 0.05).unwrap());

        let mut est = vec![0.0; 39];
        est[..4].copy_from_slice(&[5.0, 6.0, -7.0, 5.0]);
        let d = PlaceboDistribution::from_estimates(est, 0).unwrap();
        assert_eq!(d.exceed_count(), 4);
        assert!(!reject_null(&d, 0.10).unwrap());
    }

    #[test]
    fn alpha_must_be_in_unit_interval() {
        let d = PlaceboDistribution::from_estimates(vec![1.0, 0.0], 0).unwrap();
        assert!(reject_null(&d, 0.0).is_err());
        assert!(reject_null(&d, 1.0).is_err());
    }

    #[test]
    fn needs_two_units() {
        assert!(PlaceboDistribution::from_estimates(vec![1.0], 0).is_err());
    }
}

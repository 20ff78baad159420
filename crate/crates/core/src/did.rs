//! DID estimation against arbitrary control weights and the regression-to-
//! the-mean (RTM) correction.
//!
//! The RTM term replaces every post-treatment observation of the treated unit
//! and of each positively weighted control by its conditional expectation
//! given the unit's last pre-treatment observation. Under AR(1) errors that
//! expectation is `μ(τ0+k) + ρ^k·(Y(τ0) − μ(τ0))`.

use crate::error::{Error, Result};
use crate::matching::ControlWeights;
use crate::panel::{controls_of, Panel};
use crate::stats::{Ar1ErrorSpec, MeanModel};

/// Whose mean centers the last pre-treatment observation in the RTM term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// `Y_i(τ0) − μ_i(τ0)`: each unit against its own mean.
    #[default]
    OwnUnit,
    /// `Y_i(τ0) − μ_1(τ0)`: every unit against the treated unit's mean.
    TreatedUnit,
}

/// Everything the RTM correction needs besides the panel and the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RtmAdjustment {
    pub mean_model: MeanModel,
    pub spec: Ar1ErrorSpec,
    pub centering: Centering,
}

impl RtmAdjustment {
    pub fn new(mean_model: MeanModel, spec: Ar1ErrorSpec) -> Self {
        RtmAdjustment {
            mean_model,
            spec,
            centering: Centering::OwnUnit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttResult {
    pub theta_obs: f64,
    pub theta_rtm: f64,
    /// Always exactly `theta_obs − theta_rtm`.
    pub theta_adj: f64,
    pub weights: ControlWeights,
}

fn check_weights(panel: &Panel, weights: &ControlWeights) -> Result<()> {
    let expected = panel.n_units() - 1;
    if weights.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "control weights vs panel controls",
            expected,
            got: weights.len(),
        });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean over post-treatment periods of (treated − weighted control) minus the
/// same mean over pre-treatment periods.
pub fn did_estimate(panel: &Panel, weights: &ControlWeights) -> Result<f64> {
    check_weights(panel, weights)?;
    Ok(did_for(panel, panel.treated(), weights))
}

pub(crate) fn did_for(panel: &Panel, treated: usize, weights: &ControlWeights) -> f64 {
    let controls = controls_of(panel.n_units(), treated);
    let t = panel.n_times();
    let synth = weights.combine(|k| panel.series(controls[k]), t);
    let diff: Vec<f64> = panel
        .series(treated)
        .iter()
        .zip(&synth)
        .map(|(y, s)| y - s)
        .collect();
    let tau0 = panel.tau0();
    mean(&diff[tau0..]) - mean(&diff[..tau0])
}

/// Conditional expectation of each post-treatment outcome given the last
/// pre-treatment one. `series` and `unit_mean` cover the whole panel; the
/// result has `series.len() − tau0` entries.
pub fn rtm_expected_outcomes(
    series: &[f64],
    unit_mean: &[f64],
    spec: &Ar1ErrorSpec,
    tau0: usize,
) -> Result<Vec<f64>> {
    if tau0 == 0 || tau0 >= series.len() {
        return Err(Error::InvalidParameter(format!(
            "tau0 = {tau0} outside 1..{}",
            series.len()
        )));
    }
    if unit_mean.len() != series.len() {
        return Err(Error::DimensionMismatch {
            what: "mean path vs series",
            expected: series.len(),
            got: unit_mean.len(),
        });
    }
    let anchor = unit_mean[tau0 - 1];
    Ok(expected_post(series[tau0 - 1], anchor, spec.rho(), tau0, series.len(), |t| unit_mean[t]))
}

fn expected_post(
    last_pre: f64,
    anchor: f64,
    rho: f64,
    tau0: usize,
    n_times: usize,
    mu: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let innovation = last_pre - anchor;
    let mut decay = 1.0;
    (tau0..n_times)
        .map(|t| {
            decay *= rho;
            mu(t) + decay * innovation
        })
        .collect()
}

/// Expected DID under no treatment effect: mean post-treatment difference of
/// the conditional expectations minus the mean observed pre-treatment
/// difference, both against the same control weights.
pub fn theta_rtm(
    panel: &Panel,
    weights: &ControlWeights,
    mean_model: &MeanModel,
    spec: &Ar1ErrorSpec,
) -> Result<f64> {
    let adj = RtmAdjustment::new(mean_model.clone(), *spec);
    theta_rtm_with(panel, weights, &adj)
}

pub fn theta_rtm_with(panel: &Panel, weights: &ControlWeights, adj: &RtmAdjustment) -> Result<f64> {
    check_weights(panel, weights)?;
    theta_rtm_for(panel, panel.treated(), weights, adj, 0.0)
}

/// `treated_shift` is added to the treated unit's mean (sensitivity Δ).
pub(crate) fn theta_rtm_for(
    panel: &Panel,
    treated: usize,
    weights: &ControlWeights,
    adj: &RtmAdjustment,
    treated_shift: f64,
) -> Result<f64> {
    let model = &adj.mean_model;
    if model.n_times() != panel.n_times() {
        return Err(Error::InvalidParameter(format!(
            "mean model has {} periods, panel has {}",
            model.n_times(),
            panel.n_times()
        )));
    }
    model.check_unit(treated)?;
    let (tau0, t) = (panel.tau0(), panel.n_times());
    let rho = adj.spec.rho();
    let mu = |u: usize, j: usize| {
        model.evaluate(u, j) + if u == treated { treated_shift } else { 0.0 }
    };
    let treated_anchor = mu(treated, tau0 - 1);
    let anchor = |u: usize| match adj.centering {
        Centering::OwnUnit => mu(u, tau0 - 1),
        Centering::TreatedUnit => treated_anchor,
    };
    let expected = |u: usize| {
        expected_post(panel.series(u)[tau0 - 1], anchor(u), rho, tau0, t, |j| mu(u, j))
    };

    let controls = controls_of(panel.n_units(), treated);
    let mut post_diff = expected(treated);
    let mut pre_diff: Vec<f64> = panel.series(treated)[..tau0].to_vec();
    for (k, &w) in weights.weights().iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let u = controls[k];
        model.check_unit(u)?;
        for (d, e) in post_diff.iter_mut().zip(expected(u)) {
            *d -= w * e;
        }
        for (d, y) in pre_diff.iter_mut().zip(&panel.series(u)[..tau0]) {
            *d -= w * y;
        }
    }
    Ok(mean(&post_diff) - mean(&pre_diff))
}

/// Observed DID, its RTM expectation, and their difference.
pub fn adjusted_att(
    panel: &Panel,
    weights: &ControlWeights,
    mean_model: &MeanModel,
    spec: &Ar1ErrorSpec,
) -> Result<AttResult> {
    adjusted_att_with(panel, weights, &RtmAdjustment::new(mean_model.clone(), *spec))
}

pub fn adjusted_att_with(
    panel: &Panel,
    weights: &ControlWeights,
    adj: &RtmAdjustment,
) -> Result<AttResult> {
    let theta_obs = did_estimate(panel, weights)?;
    let theta_rtm = theta_rtm_with(panel, weights, adj)?;
    Ok(AttResult {
        theta_obs,
        theta_rtm,
        theta_adj: theta_obs - theta_rtm,
        weights: weights.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::matching::WeightTag;

    fn spec(rho: f64) -> Ar1ErrorSpec {
        Ar1ErrorSpec::new(1.0, rho).unwrap()
    }

    #[test]
    fn step_change_gives_unit_effect() {
        let m = Matrix::from_rows(&[
            vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0],
            vec![0.0; 8],
            vec![0.0; 8],
        ])
        .unwrap();
        let p = Panel::from_outcomes(m, 0, 4).unwrap();
        let w = ControlWeights::uniform(2).unwrap();
        assert_eq!(did_estimate(&p, &w).unwrap(), 1.0);
    }

    #[test]
    fn treated_equal_to_synthetic_gives_zero() {
        let m = Matrix::from_rows(&[
            vec![2.0, 3.0, 4.0, 1.0],
            vec![1.0, 2.0, 6.0, 0.0],
            vec![3.0, 4.0, 2.0, 2.0],
        ])
        .unwrap();
        let p = Panel::from_outcomes(m, 0, 2).unwrap();
        let w = ControlWeights::new(vec![0.5, 0.5], WeightTag::Synthetic).unwrap();
        assert!(did_estimate(&p, &w).unwrap().abs() < 1e-15);
    }

    #[test]
    fn weight_length_is_checked() {
        let p = Panel::from_outcomes(Matrix::zeros(3, 4), 0, 2).unwrap();
        assert!(did_estimate(&p, &ControlWeights::uniform(3).unwrap()).is_err());
    }

    #[test]
    fn geometric_decay_from_last_pre() {
        let series = [0.0, 0.0, 0.0, 2.0, 9.0, 9.0, 9.0, 9.0];
        let e = rtm_expected_outcomes(&series, &[0.0; 8], &spec(0.5), 4).unwrap();
        assert_eq!(e, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn zero_innovation_and_zero_rho() {
        let mu = [1.0, 2.0, 3.0, 4.0, 5.0];
        let at_mean = [7.0, 7.0, 3.0, 7.0, 7.0];
        assert_eq!(
            rtm_expected_outcomes(&at_mean, &mu, &spec(0.8), 3).unwrap(),
            vec![4.0, 5.0]
        );
        let off = [7.0, 7.0, 30.0, 7.0, 7.0];
        assert_eq!(
            rtm_expected_outcomes(&off, &mu, &spec(0.0), 3).unwrap(),
            vec![4.0, 5.0]
        );
    }

    #[test]
    fn rtm_tau0_out_of_range() {
        assert!(rtm_expected_outcomes(&[0.0; 3], &[0.0; 3], &spec(0.5), 3).is_err());
        assert!(rtm_expected_outcomes(&[0.0; 3], &[0.0; 3], &spec(0.5), 0).is_err());
    }

    /// Treated mean 5, matched control mean 0, rho 0.5, Y1(τ0) = 5,
    /// Ym(τ0) = 2, pre-period differences (7−0, 5−0, 5−0, 5−2) averaging 5.
    fn hand_example() -> (Panel, ControlWeights, MeanModel) {
        let m = Matrix::from_rows(&[
            vec![7.0, 5.0, 5.0, 5.0, 1.0, 4.0, 2.0, 8.0],
            vec![0.0, 0.0, 0.0, 2.0, 3.0, 1.0, 0.0, 5.0],
        ])
        .unwrap();
        let p = Panel::from_outcomes(m, 0, 4).unwrap();
        let w = ControlWeights::one_hot(1, 0, WeightTag::NnL2).unwrap();
        let model = MeanModel::constant(vec![5.0, 0.0], 8).unwrap();
        (p, w, model)
    }

    #[test]
    fn hand_replayed_rtm_term() {
        let (p, w, model) = hand_example();
        let r = theta_rtm(&p, &w, &model, &spec(0.5)).unwrap();
        assert!((r + 0.46875).abs() < 1e-15, "{r}");
        let att = adjusted_att(&p, &w, &model, &spec(0.5)).unwrap();
        assert_eq!(att.theta_adj, att.theta_obs - att.theta_rtm);
        assert!((att.theta_adj - (att.theta_obs + 0.46875)).abs() < 1e-14);
    }

    #[test]
    fn no_rtm_when_rho_zero_and_means_constant() {
        let m = Matrix::from_rows(&[
            vec![3.0, 5.0, 4.0, 8.0, 1.0],
            vec![1.0, 2.0, 3.0, 0.0, 7.0],
        ])
        .unwrap();
        let p = Panel::from_outcomes(m, 0, 3).unwrap();
        // mean difference equals the observed pre-period difference (2)
        let model = MeanModel::constant(vec![4.0, 2.0], 5).unwrap();
        let w = ControlWeights::one_hot(1, 0, WeightTag::NnL2).unwrap();
        let r = theta_rtm(&p, &w, &model, &spec(0.0)).unwrap();
        assert!(r.abs() < 1e-15);
        let att = adjusted_att(&p, &w, &model, &spec(0.0)).unwrap();
        assert_eq!(att.theta_adj, att.theta_obs);
    }

    #[test]
    fn treated_centering_uses_treated_mean_for_controls() {
        let m = Matrix::from_rows(&[vec![0.0, 5.0, 0.0], vec![0.0, 2.0, 0.0]]).unwrap();
        let p = Panel::from_outcomes(m, 0, 2).unwrap();
        let w = ControlWeights::one_hot(1, 0, WeightTag::NnL2).unwrap();
        let model = MeanModel::constant(vec![5.0, 0.0], 3).unwrap();
        let mut adj = RtmAdjustment::new(model, spec(0.5));
        let own = theta_rtm_with(&p, &w, &adj).unwrap();
        adj.centering = Centering::TreatedUnit;
        let literal = theta_rtm_with(&p, &w, &adj).unwrap();
        // own: post 5 − (0 + 0.5·2) = 4; literal: 5 − (0 + 0.5·(2 − 5)) = 6.5; pre diff 1.5
        assert!((own - 2.5).abs() < 1e-15);
        assert!((literal - 5.0).abs() < 1e-15);
    }

    #[test]
    fn model_must_cover_weighted_units() {
        let p = Panel::from_outcomes(Matrix::zeros(3, 4), 0, 2).unwrap();
        let model = MeanModel::constant(vec![0.0, 0.0], 4).unwrap();
        let w = ControlWeights::one_hot(2, 1, WeightTag::NnL2).unwrap();
        assert!(theta_rtm(&p, &w, &model, &spec(0.5)).is_err());
        // a zero-weight unit outside the model is fine
        let w0 = ControlWeights::one_hot(2, 0, WeightTag::NnL2).unwrap();
        assert!(theta_rtm(&p, &w0, &model, &spec(0.5)).is_ok());
    }
}

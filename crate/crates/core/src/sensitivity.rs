//! Sensitivity of the adjusted estimate to the assumed untreated mean of the
//! treated unit (shift `Δ`) and, optionally, to the AR(1) parameters.
//!
//! Matching weights are fit once per relabelling and reused at every grid
//! point; only the RTM term changes. At each point the placebo test shifts
//! the mean of whichever unit currently plays the treated role.

use std::io::Write;

use crate::did::{did_for, theta_rtm_for, Centering, RtmAdjustment};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::inference::{check_alpha, relabel_error, relabel_weights, MatchMethod, PlaceboDistribution};
use crate::panel::Panel;
use crate::stats::{Ar1ErrorSpec, MeanModel};

/// Copy of `model` with `delta` added to `unit`'s mean at every time.
pub fn shift_mean_model(model: &MeanModel, delta: f64, unit: usize) -> Result<MeanModel> {
    model.shifted(unit, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityGrid {
    pub deltas: Vec<f64>,
    /// Autocorrelations to sweep; empty means the base value only.
    pub rhos: Vec<f64>,
    /// Innovation variances to sweep; empty means the base value only.
    pub s2s: Vec<f64>,
    pub base_model: MeanModel,
    pub base_spec: Ar1ErrorSpec,
    pub centering: Centering,
}

impl SensitivityGrid {
    pub fn new(deltas: Vec<f64>, base_model: MeanModel, base_spec: Ar1ErrorSpec) -> Self {
        SensitivityGrid {
            deltas,
            rhos: Vec::new(),
            s2s: Vec::new(),
            base_model,
            base_spec,
            centering: Centering::OwnUnit,
        }
    }

    /// `steps` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
        if steps == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidParameter(format!(
                "bad grid: {steps} points over [{lo}, {hi}]"
            )));
        }
        if steps == 1 {
            return Ok(vec![lo]);
        }
        let h = (hi - lo) / (steps - 1) as f64;
        Ok((0..steps)
            .map(|i| if i + 1 == steps { hi } else { lo + h * i as f64 })
            .collect())
    }

    /// 21 points over `[−5, 5]`.
    pub fn default_deltas() -> Vec<f64> {
        Self::linspace(-5.0, 5.0, 21).expect("valid grid")
    }

    fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::InvalidParameter("empty delta grid".into()));
        }
        if self.deltas.iter().chain(&self.s2s).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sensitivity grid"));
        }
        for &r in &self.rhos {
            self.base_spec.with_rho(r)?;
        }
        for &s in &self.s2s {
            self.base_spec.with_sigma2(s)?;
        }
        Ok(())
    }

    /// Grid points in output order: `ρ` outermost, then `s²`, then `Δ`.
    pub fn points(&self) -> Result<Vec<(f64, Ar1ErrorSpec)>> {
        self.validate()?;
        let rhos = if self.rhos.is_empty() {
            vec![self.base_spec.rho()]
        } else {
            self.rhos.clone()
        };
        let s2s = if self.s2s.is_empty() {
            vec![self.base_spec.sigma2()]
        } else {
            self.s2s.clone()
        };
        let mut out = Vec::new();
        for &rho in &rhos {
            for &s2 in &s2s {
                let spec = Ar1ErrorSpec::new(s2, rho)?;
                out.extend(self.deltas.iter().map(|&d| (d, spec)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub delta: f64,
    pub rho: f64,
    pub s2: f64,
    pub theta_adj: f64,
    pub p_value: f64,
    /// Numerator of `p_value` over `n_units`.
    pub exceed_count: usize,
    pub n_units: usize,
    pub reject: bool,
}

/// Adjusted estimate and placebo p-value at every grid point.
pub fn sensitivity_sweep(
    panel: &Panel,
    grid: &SensitivityGrid,
    method: &MatchMethod,
    alpha: f64,
    exec: Exec,
) -> Result<Vec<SensitivityRow>> {
    check_alpha(alpha)?;
    grid.base_model.check_covers(panel)?;
    let points = grid.points()?;
    let weights = relabel_weights(panel, method, exec)?;
    let n = panel.n_units();
    let observed: Vec<f64> = (0..n).map(|i| did_for(panel, i, &weights[i])).collect();

    exec.try_map(points.len(), |g| {
        let (delta, spec) = points[g];
        let adj = RtmAdjustment {
            mean_model: grid.base_model.clone(),
            spec,
            centering: grid.centering,
        };
        let estimates = (0..n)
            .map(|i| {
                theta_rtm_for(panel, i, &weights[i], &adj, delta)
                    .map(|rtm| observed[i] - rtm)
                    .map_err(|e| relabel_error(panel, i, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let dist = PlaceboDistribution::from_estimates(estimates, panel.treated())?;
        Ok(SensitivityRow {
            delta,
            rho: spec.rho(),
            s2: spec.sigma2(),
            theta_adj: dist.treated_estimate(),
            p_value: dist.p_value(),
            exceed_count: dist.exceed_count(),
            n_units: n,
            reject: dist.p_value() < alpha,
        })
    })
}

/// Smallest-magnitude `Δ` whose significance differs from the `Δ = 0` row
/// with the same `ρ` and `s²`. `None` when nothing flips or when `Δ = 0` is
/// the only point. Ties in magnitude go to the earlier row.
pub fn robustness_threshold(rows: &[SensitivityRow], alpha: f64) -> Result<Option<f64>> {
    check_alpha(alpha)?;
    if rows.is_empty() {
        return Err(Error::InvalidParameter("no sensitivity rows".into()));
    }
    let mut best: Option<f64> = None;
    let mut saw_base = false;
    for base in rows.iter().filter(|r| r.delta == 0.0) {
        saw_base = true;
        let base_sig = base.p_value < alpha;
        for r in rows
            .iter()
            .filter(|r| r.rho == base.rho && r.s2 == base.s2 && r.delta != 0.0)
        {
            if (r.p_value < alpha) != base_sig && best.is_none_or(|b| r.delta.abs() < b.abs()) {
                best = Some(r.delta);
            }
        }
    }
    if !saw_base {
        return Err(Error::InvalidParameter(
            "sensitivity grid has no delta = 0 row".into(),
        ));
    }
    Ok(best)
}

pub const SENSITIVITY_HEADER: [&str; 6] = ["delta", "rho", "s2", "theta_adj", "p_value", "reject_at_alpha"];

pub fn write_sensitivity<W: Write>(rows: &[SensitivityRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SENSITIVITY_HEADER)?;
    for r in rows {
        w.write_record([
            r.delta.to_string(),
            r.rho.to_string(),
            r.s2.to_string(),
            r.theta_adj.to_string(),
            r.p_value.to_string(),
            r.reject.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

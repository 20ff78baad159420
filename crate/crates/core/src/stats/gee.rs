//! Gaussian GEE with an AR(1) working correlation, and residual AR(1)
//! moment estimates.
//!
//! The fit uses the untreated observations only: every control unit over the
//! whole panel and the treated unit over its pre-treatment periods. Each unit
//! is a cluster of consecutive periods, so the working-correlation GLS step is
//! done by Prais–Winsten whitening within each cluster followed by OLS.

use crate::error::{Error, Result};
use crate::linalg::{least_squares, spd_inverse, Matrix};
use crate::panel::Panel;

use super::mean_model::MeanModel;

pub const GEE_TOLERANCE: f64 = 1e-8;
pub const GEE_MAX_ITER: usize = 100;
const RHO_CEILING: f64 = 0.9999;

/// Regressors for the mean model. The design always starts with an
/// intercept and the numeric time label; then the named time-varying panel
/// covariates; then unit-level predictors (one value per unit, constant over
/// time).
#[derive(Debug, Clone, Default)]
pub struct GeeDesign {
    pub time_varying: Vec<String>,
    pub unit_level: Vec<(String, Vec<f64>)>,
    /// Hold the working correlation at this value instead of estimating it.
    pub fixed_rho: Option<f64>,
}

impl GeeDesign {
    pub fn with_covariates(names: &[&str]) -> Self {
        GeeDesign {
            time_varying: names.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeeFit {
    pub model: MeanModel,
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Sandwich (robust) standard errors.
    pub robust_se: Vec<f64>,
    /// Final working correlation.
    pub rho: f64,
    /// Pooled residual variance `Σr²/(N−p)`.
    pub s2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The moment estimate of rho left [0, 1) and was clamped.
    pub rho_clamped: bool,
    pub n_obs: usize,
}

/// Untreated observation ranges: `(unit, 0..end)` with `end = tau0` for the
/// treated unit and `n_times` for controls.
pub(crate) fn untreated_rows(panel: &Panel) -> Vec<(usize, usize)> {
    (0..panel.n_units())
        .map(|u| {
            let end = if u == panel.treated() {
                panel.tau0()
            } else {
                panel.n_times()
            };
            (u, end)
        })
        .collect()
}

fn build_design(panel: &Panel, design: &GeeDesign) -> Result<(Vec<String>, Vec<f64>)> {
    let (n, t) = (panel.n_units(), panel.n_times());
    let mut terms = vec!["(intercept)".to_string(), "time".to_string()];
    let mut tv = Vec::new();
    for name in &design.time_varying {
        let c = panel
            .covariate(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown covariate `{name}`")))?;
        tv.push(&c.values);
        terms.push(name.clone());
    }
    for (name, values) in &design.unit_level {
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                what: "unit-level predictor length",
                expected: n,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("unit-level predictor"));
        }
        terms.push(name.clone());
    }
    let p = terms.len();
    let mut x = Vec::with_capacity(n * t * p);
    for u in 0..n {
        for j in 0..t {
            x.push(1.0);
            x.push(panel.times()[j] as f64);
            for c in &tv {
                let v = c[(u, j)];
                if !v.is_finite() {
                    return Err(Error::InsufficientData(format!(
                        "covariate missing for unit `{}` at time {}",
                        panel.unit_ids()[u],
                        panel.times()[j]
                    )));
                }
                x.push(v);
            }
            for (_, values) in &design.unit_level {
                x.push(values[u]);
            }
        }
    }
    Ok((terms, x))
}

struct Clusters<'a> {
    rows: Vec<(usize, usize)>,
    x: &'a [f64],
    p: usize,
    n_times: usize,
    panel: &'a Panel,
}

impl Clusters<'_> {
    fn xrow(&self, u: usize, j: usize) -> &[f64] {
        let off = (u * self.n_times + j) * self.p;
        &self.x[off..off + self.p]
    }

    fn n_obs(&self) -> usize {
        self.rows.iter().map(|&(_, e)| e).sum()
    }

    /// Whitened stacked design and response under AR(1) correlation `rho`.
    fn whitened(&self, rho: f64) -> (Matrix, Vec<f64>) {
        let n_obs = self.n_obs();
        let mut xd = Vec::with_capacity(n_obs * self.p);
        let mut yd = Vec::with_capacity(n_obs);
        let scale = 1.0 / (1.0 - rho * rho).sqrt();
        for &(u, end) in &self.rows {
            let y = self.panel.series(u);
            for j in 0..end {
                let xr = self.xrow(u, j);
                if j == 0 {
                    xd.extend_from_slice(xr);
                    yd.push(y[0]);
                } else {
                    let prev = self.xrow(u, j - 1);
                    xd.extend(xr.iter().zip(prev).map(|(a, b)| (a - rho * b) * scale));
                    yd.push((y[j] - rho * y[j - 1]) * scale);
                }
            }
        }
        (Matrix::from_row_major(n_obs, self.p, xd).unwrap(), yd)
    }

    fn residuals(&self, beta: &[f64]) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|&(u, end)| {
                let y = self.panel.series(u);
                (0..end)
                    .map(|j| y[j] - crate::linalg::dot(self.xrow(u, j), beta))
                    .collect()
            })
            .collect()
    }
}

/// Fits the mean model by alternating a GLS coefficient update under the
/// current working correlation with a moment update of the correlation, until
/// the largest coefficient change falls below 1e-8 or 100 iterations pass.
/// Non-convergence is reported through [`GeeFit::converged`], not as an error.
pub fn gee_ar1_fit(panel: &Panel, design: &GeeDesign) -> Result<GeeFit> {
    if panel.tau0() < 2 {
        return Err(Error::InsufficientData(
            "GEE needs at least two periods per unit".into(),
        ));
    }
    if let Some(r) = design.fixed_rho {
        super::ar1::check_rho(r)?;
    }
    let (terms, x) = build_design(panel, design)?;
    let p = terms.len();
    let cl = Clusters {
        rows: untreated_rows(panel),
        x: &x,
        p,
        n_times: panel.n_times(),
        panel,
    };
    let n_obs = cl.n_obs();
    if n_obs <= p {
        return Err(Error::InsufficientData(format!(
            "{n_obs} observations for {p} regressors"
        )));
    }
    let n_pairs: usize = cl.rows.iter().map(|&(_, e)| e.saturating_sub(1)).sum();
    let y_scale = cl
        .rows
        .iter()
        .flat_map(|&(u, e)| panel.series(u)[..e].iter())
        .map(|v| v * v)
        .sum::<f64>()
        / n_obs as f64;

    let (x0, y0) = cl.whitened(0.0);
    let mut beta = least_squares(&x0, &y0).map_err(|e| match e {
        Error::RankDeficient { column } => Error::InvalidParameter(format!(
            "design term `{}` is collinear with the terms before it",
            terms[column.min(p - 1)]
        )),
        e => e,
    })?;
    let mut rho = design.fixed_rho.unwrap_or(0.0);
    let mut rho_clamped = false;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=GEE_MAX_ITER {
        iterations = it;
        if design.fixed_rho.is_none() {
            let res = cl.residuals(&beta);
            let ss: f64 = res.iter().flatten().map(|r| r * r).sum();
            let phi = ss / (n_obs - p) as f64;
            if phi <= 1e-24 * y_scale.max(f64::MIN_POSITIVE) {
                rho = 0.0;
            } else {
                let lag: f64 = res
                    .iter()
                    .flat_map(|r| r.windows(2).map(|w| w[0] * w[1]))
                    .sum();
                let denom = n_pairs.saturating_sub(p).max(1) as f64;
                let est = lag / denom / phi;
                rho_clamped = !(0.0..RHO_CEILING).contains(&est);
                rho = est.clamp(0.0, RHO_CEILING);
            }
        }
        let (xw, yw) = cl.whitened(rho);
        let next = least_squares(&xw, &yw)?;
        let change = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = next;
        if change < GEE_TOLERANCE {
            converged = true;
            break;
        }
    }

    let res = cl.residuals(&beta);
    let ss: f64 = res.iter().flatten().map(|r| r * r).sum();
    let s2 = ss / (n_obs - p) as f64;
    let robust_se = sandwich_se(&cl, &beta, rho)?;
    let model = MeanModel::fitted(terms.clone(), beta.clone(), x, panel.n_units(), panel.n_times())?;

    Ok(GeeFit {
        model,
        terms,
        coefficients: beta,
        robust_se,
        rho,
        s2,
        iterations,
        converged,
        rho_clamped,
        n_obs,
    })
}

/// `B⁻¹ M B⁻¹` with `B = Σ X̃ᵢᵀX̃ᵢ`, `M = Σ (X̃ᵢᵀr̃ᵢ)(X̃ᵢᵀr̃ᵢ)ᵀ` on whitened clusters.
fn sandwich_se(cl: &Clusters<'_>, beta: &[f64], rho: f64) -> Result<Vec<f64>> {
    let p = cl.p;
    let (xw, yw) = cl.whitened(rho);
    let mut bread = Matrix::zeros(p, p);
    let mut meat = Matrix::zeros(p, p);
    let mut row = 0;
    for &(_, end) in &cl.rows {
        let mut score = vec![0.0; p];
        for _ in 0..end {
            let xr = xw.row(row);
            let r = yw[row] - crate::linalg::dot(xr, beta);
            for a in 0..p {
                score[a] += xr[a] * r;
                for b in 0..p {
                    bread[(a, b)] += xr[a] * xr[b];
                }
            }
            row += 1;
        }
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += score[a] * score[b];
            }
        }
    }
    let binv = spd_inverse(&bread)?;
    let cov = binv.matmul(&meat)?.matmul(&binv)?;
    Ok((0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
}

/// Residual variance and lag-1 residual correlation of a mean model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualAr1 {
    /// Pooled sample variance of the residuals.
    pub s2: f64,
    /// Pearson correlation of adjacent residual pairs, pooled across units.
    pub rho: f64,
    pub n_residuals: usize,
    pub n_pairs: usize,
}

/// Residual AR(1) moments over the untreated observations (controls over the
/// whole panel, treated unit before treatment).
pub fn residual_ar1_estimates(panel: &Panel, model: &MeanModel) -> Result<ResidualAr1> {
    model.check_covers(panel)?;
    let rows = untreated_rows(panel);
    let res: Vec<Vec<f64>> = rows
        .iter()
        .map(|&(u, end)| {
            let y = panel.series(u);
            (0..end).map(|j| y[j] - model.evaluate(u, j)).collect()
        })
        .collect();
    residual_moments(&res)
}

pub(crate) fn residual_moments(res: &[Vec<f64>]) -> Result<ResidualAr1> {
    let all: Vec<f64> = res.iter().flatten().copied().collect();
    let pairs: Vec<(f64, f64)> = res
        .iter()
        .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} adjacent residual pairs, need at least 2",
            pairs.len()
        )));
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let s2 = all.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);

    let k = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::InsufficientData(
            "residuals have no variation; lag-1 correlation is undefined".into(),
        ));
    }
    Ok(ResidualAr1 {
        s2,
        rho: sxy / (sxx * syy).sqrt(),
        n_residuals: all.len(),
        n_pairs: pairs.len(),
    })
}

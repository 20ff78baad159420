//! Monte Carlo harness: type I error, power, and robustness of the adjusted
//! estimator to heavy-tailed errors.
//!
//! Unit 0 of every simulated panel is treated; units `1..=n_controls` are
//! controls. Replication `r` draws from stream `r` of the scenario seed, so a
//! report depends only on `(config, methods)` and never on scheduling.

use std::io::Write;

use crate::did::{did_for, theta_rtm_for, RtmAdjustment};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::inference::{
    check_alpha, relabel_weights, EstimatorConfig, MatchMethod, PlaceboDistribution,
};
use crate::linalg::Matrix;
use crate::matching::TrendDistance;
use crate::panel::Panel;
use crate::stats::sampling::sample_mvt_into;
use crate::stats::{build_ar1_cov, cholesky, Ar1ErrorSpec, CholeskyFactor, MeanModel, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorFamily {
    Normal,
    /// Multivariate t with the AR(1) matrix as scale matrix. `rescale`
    /// shrinks draws to unit-`σ²` marginal variance.
    StudentT { df: f64, rescale: bool },
}

impl ErrorFamily {
    /// Degrees of freedom, infinite for normal errors.
    pub fn df(&self) -> f64 {
        match self {
            ErrorFamily::Normal => f64::INFINITY,
            ErrorFamily::StudentT { df, .. } => *df,
        }
    }
}

/// How the treatment effect enters the treated unit's post-period mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EffectShape {
    /// `m·θ` at post step `m = 1, 2, …`.
    #[default]
    Cumulative,
    /// `θ` at every post step.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_controls: usize,
    pub n_times: usize,
    pub tau0: usize,
    pub mu0: f64,
    pub mu1: f64,
    pub spec: Ar1ErrorSpec,
    pub theta: f64,
    pub effect: EffectShape,
    pub error_family: ErrorFamily,
    pub n_reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// 40 controls, 8 periods split 4/4, `μ0 = 0`, `σ² = 1`, `ρ = 0.5`,
    /// normal errors, no effect, 2000 replications at `α = 0.05`.
    pub fn new(mu1: f64, seed: u64) -> Self {
        ScenarioConfig {
            n_controls: 40,
            n_times: 8,
            tau0: 4,
            mu0: 0.0,
            mu1,
            spec: Ar1ErrorSpec::new(1.0, 0.5).expect("valid default"),
            theta: 0.0,
            effect: EffectShape::Cumulative,
            error_family: ErrorFamily::Normal,
            n_reps: 2000,
            alpha: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_controls == 0 {
            return Err(Error::InvalidParameter("need at least one control".into()));
        }
        if self.tau0 == 0 || self.tau0 >= self.n_times {
            return Err(Error::InvalidParameter(format!(
                "tau0 = {} outside 1..{}",
                self.tau0, self.n_times
            )));
        }
        if self.n_reps == 0 {
            return Err(Error::InvalidParameter("n_reps must be at least 1".into()));
        }
        if !(self.mu0.is_finite() && self.mu1.is_finite() && self.theta.is_finite()) {
            return Err(Error::NonFinite("scenario means"));
        }
        if let ErrorFamily::StudentT { df, .. } = self.error_family {
            if df.is_nan() || df <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "degrees of freedom must be positive, got {df}"
                )));
            }
        }
        check_alpha(self.alpha)
    }

    pub fn n_units(&self) -> usize {
        self.n_controls + 1
    }

    /// Expected outcome path of the treated unit, effect included.
    pub fn treated_mean_path(&self) -> Vec<f64> {
        (0..self.n_times)
            .map(|t| {
                if t < self.tau0 {
                    self.mu1
                } else {
                    let step = match self.effect {
                        EffectShape::Cumulative => (t + 1 - self.tau0) as f64,
                        EffectShape::Constant => 1.0,
                    };
                    self.mu1 + step * self.theta
                }
            })
            .collect()
    }

    /// Untreated means used by the adjusted estimator: `μ1` for the treated
    /// unit, `μ0` for every control, constant in time.
    pub fn true_mean_model(&self) -> Result<MeanModel> {
        let mut levels = vec![self.mu0; self.n_units()];
        levels[0] = self.mu1;
        MeanModel::constant(levels, self.n_times)
    }

    fn factor(&self) -> Result<CholeskyFactor> {
        cholesky(&build_ar1_cov(self.n_times, &self.spec)?)
    }
}

fn draw_panel(config: &ScenarioConfig, factor: &CholeskyFactor, rep: u64) -> Result<Panel> {
    let mut rng = RngStream::new(config.seed, rep);
    let (n, t) = (config.n_units(), config.n_times);
    let (df, rescale) = match config.error_family {
        ErrorFamily::Normal => (f64::INFINITY, false),
        ErrorFamily::StudentT { df, rescale } => (df, rescale),
    };
    let treated_mean = config.treated_mean_path();
    let control_mean = vec![config.mu0; t];
    let mut y = Matrix::zeros(n, t);
    for u in 0..n {
        let mean = if u == 0 { &treated_mean } else { &control_mean };
        sample_mvt_into(mean, factor, df, rescale, &mut rng, y.row_mut(u))?;
    }
    Panel::from_outcomes(y, 0, config.tau0)
}

/// One simulated panel. The treated unit (index 0) is drawn first, then the
/// controls in order, all from stream `rep` of `config.seed`.
pub fn simulate_panel(config: &ScenarioConfig, rep: u64) -> Result<Panel> {
    config.validate()?;
    draw_panel(config, &config.factor()?, rep)
}

/// An estimator evaluated in an experiment. Adjusted methods use the
/// scenario's true means and AR(1) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub label: String,
    pub method: MatchMethod,
    pub adjusted: bool,
}

impl MethodSpec {
    pub fn new(label: impl Into<String>, method: MatchMethod, adjusted: bool) -> Self {
        MethodSpec {
            label: label.into(),
            method,
            adjusted,
        }
    }

    /// Unmatched, synthetic control, L2 nearest neighbour, trend nearest
    /// neighbour; all unadjusted.
    pub fn standard() -> Vec<MethodSpec> {
        vec![
            MethodSpec::new("unmatched", MatchMethod::Unmatched, false),
            MethodSpec::new("sc", MatchMethod::synthetic(), false),
            MethodSpec::new("nn1", MatchMethod::NnL2, false),
            MethodSpec::new("nn2", MatchMethod::NnTrend(TrendDistance::default()), false),
        ]
    }

    pub fn adjusted_sc() -> Vec<MethodSpec> {
        vec![MethodSpec::new("sc_adj", MatchMethod::synthetic(), true)]
    }
}

/// Aggregate over replications for one scenario and one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub scenario: ScenarioConfig,
    pub method: String,
    pub rejection_rate: f64,
    /// `sqrt(r(1−r)/n_reps)`.
    pub mc_se: f64,
    /// Mean and standard deviation (divisor `n − 1`) of the treated unit's
    /// estimate across replications.
    pub mean_theta: f64,
    pub sd_theta: f64,
}

impl ExperimentRow {
    /// Standard error of `mean_theta`.
    pub fn theta_se(&self) -> f64 {
        self.sd_theta / (self.scenario.n_reps as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
struct RepOutcome {
    theta: f64,
    reject: bool,
}

fn run_rep(
    config: &ScenarioConfig,
    factor: &CholeskyFactor,
    methods: &[MethodSpec],
    adjustment: Option<&RtmAdjustment>,
    rep: u64,
) -> Result<Vec<RepOutcome>> {
    let panel = draw_panel(config, factor, rep)?;
    let mut fitted: Vec<(&MatchMethod, Vec<_>)> = Vec::new();
    let mut out = Vec::with_capacity(methods.len());
    for m in methods {
        let pos = match fitted.iter().position(|(k, _)| *k == &m.method) {
            Some(p) => p,
            None => {
                fitted.push((&m.method, relabel_weights(&panel, &m.method, Exec::Sequential)?));
                fitted.len() - 1
            }
        };
        let weights = &fitted[pos].1;
        let estimates = (0..panel.n_units())
            .map(|i| {
                let obs = did_for(&panel, i, &weights[i]);
                match (m.adjusted, adjustment) {
                    (true, Some(adj)) => Ok(obs - theta_rtm_for(&panel, i, &weights[i], adj, 0.0)?),
                    _ => Ok(obs),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let dist = PlaceboDistribution::from_estimates(estimates, 0)?;
        out.push(RepOutcome {
            theta: dist.treated_estimate(),
            reject: dist.p_value() < config.alpha,
        });
    }
    Ok(out)
}

/// Runs every scenario against every method. Rows are ordered by scenario,
/// then method.
pub fn run_experiment(
    configs: &[ScenarioConfig],
    methods: &[MethodSpec],
    exec: Exec,
) -> Result<Vec<ExperimentRow>> {
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(configs.len() * methods.len());
    for config in configs {
        config.validate()?;
        let factor = config.factor()?;
        let adjustment = if methods.iter().any(|m| m.adjusted) {
            Some(RtmAdjustment::new(config.true_mean_model()?, config.spec))
        } else {
            None
        };
        let reps = exec.try_map(config.n_reps, |r| {
            run_rep(config, &factor, methods, adjustment.as_ref(), r as u64)
        })?;
        for (j, m) in methods.iter().enumerate() {
            let thetas: Vec<f64> = reps.iter().map(|r| r[j].theta).collect();
            let rejections = reps.iter().filter(|r| r[j].reject).count();
            rows.push(summarize(config, &m.label, &thetas, rejections));
        }
    }
    Ok(rows)
}

fn summarize(config: &ScenarioConfig, label: &str, thetas: &[f64], rejections: usize) -> ExperimentRow {
    let n = thetas.len() as f64;
    let rate = rejections as f64 / n;
    let mean = thetas.iter().sum::<f64>() / n;
    let sd = if thetas.len() > 1 {
        (thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    ExperimentRow {
        scenario: config.clone(),
        method: label.to_string(),
        rejection_rate: rate,
        mc_se: (rate * (1.0 - rate) / n).sqrt(),
        mean_theta: mean,
        sd_theta: sd,
    }
}

fn require_null(configs: &[ScenarioConfig]) -> Result<()> {
    if let Some(c) = configs.iter().find(|c| c.theta != 0.0) {
        return Err(Error::InvalidParameter(format!(
            "type I error experiment needs theta = 0, got {}",
            c.theta
        )));
    }
    Ok(())
}

/// Null rejection rates of the four standard estimators.
pub fn run_type1_experiment(configs: &[ScenarioConfig], exec: Exec) -> Result<Vec<ExperimentRow>> {
    require_null(configs)?;
    run_experiment(configs, &MethodSpec::standard(), exec)
}

/// Rejection rates of the four standard estimators at each effect size.
pub fn run_power_experiment(
    base: &ScenarioConfig,
    thetas: &[f64],
    exec: Exec,
) -> Result<Vec<ExperimentRow>> {
    let configs: Vec<_> = thetas
        .iter()
        .map(|&theta| ScenarioConfig {
            theta,
            ..base.clone()
        })
        .collect();
    run_experiment(&configs, &MethodSpec::standard(), exec)
}

/// Null rejection rates of the adjusted synthetic control estimator.
pub fn run_robustness_experiment(
    configs: &[ScenarioConfig],
    exec: Exec,
) -> Result<Vec<ExperimentRow>> {
    require_null(configs)?;
    run_experiment(configs, &MethodSpec::adjusted_sc(), exec)
}

/// `μ1 ∈ {1, …, 5}` with `ρ = 0.5`.
pub fn mu1_grid(seed: u64, n_reps: usize) -> Vec<ScenarioConfig> {
    (1..=5)
        .map(|m| ScenarioConfig {
            n_reps,
            ..ScenarioConfig::new(m as f64, seed)
        })
        .collect()
}

/// `ρ ∈ {0, 0.25, 0.5, 0.75, 0.9}` with `μ1 = 5`.
pub fn rho_grid(seed: u64, n_reps: usize) -> Vec<ScenarioConfig> {
    [0.0, 0.25, 0.5, 0.75, 0.9]
        .iter()
        .map(|&rho| ScenarioConfig {
            spec: Ar1ErrorSpec::new(1.0, rho).expect("valid rho"),
            n_reps,
            ..ScenarioConfig::new(5.0, seed)
        })
        .collect()
}

/// `θ ∈ {0, −0.25, …, −1.5}`.
pub fn power_thetas() -> Vec<f64> {
    (0..=6).map(|k| 0.0 - 0.25 * k as f64).collect()
}

/// Degrees of freedom `{∞, 50, 10, 3}` crossed with `ρ ∈ {0.25, 0.5, 0.75}`,
/// `μ1 = 1`.
pub fn robustness_grid(seed: u64, n_reps: usize, rescale: bool) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for df in [f64::INFINITY, 50.0, 10.0, 3.0] {
        for rho in [0.25, 0.5, 0.75] {
            let error_family = if df.is_infinite() {
                ErrorFamily::Normal
            } else {
                ErrorFamily::StudentT { df, rescale }
            };
            out.push(ScenarioConfig {
                spec: Ar1ErrorSpec::new(1.0, rho).expect("valid rho"),
                error_family,
                n_reps,
                ..ScenarioConfig::new(1.0, seed)
            });
        }
    }
    out
}

pub const REPORT_HEADER: [&str; 18] = [
    "n_controls",
    "n_times",
    "tau0",
    "mu0",
    "mu1",
    "sigma2",
    "rho",
    "theta",
    "effect",
    "df",
    "n_reps",
    "alpha",
    "seed",
    "method",
    "rejection_rate",
    "mc_se",
    "mean_theta",
    "sd_theta",
];

/// Writes rows as CSV with [`REPORT_HEADER`].
pub fn write_report<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        let s = &r.scenario;
        let effect = match s.effect {
            EffectShape::Cumulative => "cumulative",
            EffectShape::Constant => "constant",
        };
        w.write_record([
            s.n_controls.to_string(),
            s.n_times.to_string(),
            s.tau0.to_string(),
            s.mu0.to_string(),
            s.mu1.to_string(),
            s.spec.sigma2().to_string(),
            s.spec.rho().to_string(),
            s.theta.to_string(),
            effect.to_string(),
            fmt_df(s.error_family.df()),
            s.n_reps.to_string(),
            s.alpha.to_string(),
            s.seed.to_string(),
            r.method.clone(),
            r.rejection_rate.to_string(),
            r.mc_se.to_string(),
            r.mean_theta.to_string(),
            r.sd_theta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_df(df: f64) -> String {
    if df.is_infinite() {
        "inf".into()
    } else {
        df.to_string()
    }
}

/// Estimator configuration matching `spec` for a simulated panel.
pub fn estimator_for(config: &ScenarioConfig, spec: &MethodSpec) -> Result<EstimatorConfig> {
    let adjustment = if spec.adjusted {
        Some(RtmAdjustment::new(config.true_mean_model()?, config.spec))
    } else {
        None
    };
    Ok(EstimatorConfig {
        method: spec.method.clone(),
        adjustment,
    })
}

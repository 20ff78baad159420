//! Observational pipeline: match, estimate, fit the untreated mean model,
//! adjust, run placebo tests, sweep the sensitivity grid, write the report.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::did::{adjusted_att_with, AttResult, Centering, RtmAdjustment};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::inference::{
    estimate_weights, placebo_test, EstimatorConfig, MatchMethod, PlaceboDistribution, Predictors,
    SyntheticOptions,
};
use crate::linalg::Matrix;
use crate::matching::TrendDistance;
use crate::panel::{controls_of, Panel};
use crate::panel_io::Config;
use crate::sensitivity::{robustness_threshold, sensitivity_sweep, write_sensitivity, SensitivityGrid, SensitivityRow};
use crate::stats::{gee_ar1_fit, residual_ar1_estimates, Ar1ErrorSpec, GeeDesign, GeeFit, MeanModel, ResidualAr1};

/// Keys understood by [`AnalysisConfig::from_config`].
pub const CONFIG_KEYS: &[&str] = &[
    "unit_col",
    "time_col",
    "outcome_col",
    "treated",
    "tau0",
    "method",
    "nn_trend_distance",
    "sc_covariates",
    "sc_window",
    "sc_outcome_years",
    "sc_pre_outcomes",
    "sc_predictor_weight",
    "adjustment",
    "gee_covariates",
    "gee_unit_predictors",
    "mean_model",
    "rho",
    "s2",
    "centering",
    "alpha",
    "deltas",
    "delta_min",
    "delta_max",
    "delta_steps",
    "sensitivity_rhos",
    "sensitivity_s2s",
    "seed",
];

/// Where the RTM correction gets its mean model and AR(1) parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjustmentSource {
    /// GEE mean model; `ρ` and `s²` from its residuals unless overridden.
    Gee {
        time_varying: Vec<String>,
        /// Add the synthetic control predictors as unit-level regressors.
        unit_predictors: bool,
        rho: Option<f64>,
        s2: Option<f64>,
    },
    /// Mean model from each unit's own pre-treatment data, given `ρ` and `s²`.
    Explicit { mean_model: ExplicitMean, rho: f64, s2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplicitMean {
    PreMean,
    PreTrend,
}

/// Synthetic control predictors: covariates averaged over a window of time
/// labels plus outcomes at chosen time labels, each standardized across units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictorSpec {
    pub covariates: Vec<String>,
    /// Inclusive time-label window; `None` means every pre-treatment period.
    pub window: Option<(i64, i64)>,
    pub outcome_times: Vec<i64>,
}

impl PredictorSpec {
    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty() && self.outcome_times.is_empty()
    }

    /// Raw (unstandardized) predictor values, `units × predictors`, with names.
    pub fn raw_values(&self, panel: &Panel) -> Result<(Vec<String>, Matrix)> {
        let n = panel.n_units();
        let tau0 = panel.tau0();
        let cols: Vec<usize> = match self.window {
            None => (0..tau0).collect(),
            Some((a, b)) => (0..panel.n_times())
                .filter(|&j| (a..=b).contains(&panel.times()[j]))
                .collect(),
        };
        if cols.is_empty() && !self.covariates.is_empty() {
            return Err(Error::Config("predictor window contains no periods".into()));
        }
        let mut names = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for name in &self.covariates {
            let c = panel
                .covariate(name)
                .ok_or_else(|| Error::Config(format!("unknown covariate `{name}`")))?;
            let mut col = Vec::with_capacity(n);
            for u in 0..n {
                let vals: Vec<f64> = cols.iter().map(|&j| c.values[(u, j)]).filter(|v| !v.is_nan()).collect();
                if vals.is_empty() {
                    return Err(Error::InsufficientData(format!(
                        "covariate `{name}` has no values for unit `{}` in the predictor window",
                        panel.unit_ids()[u]
                    )));
                }
                col.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
            names.push(name.clone());
            columns.push(col);
        }
        for &t in &self.outcome_times {
            let j = panel
                .time_index(t)
                .filter(|&j| j < tau0)
                .ok_or_else(|| Error::Config(format!("outcome predictor time {t} is not a pre-treatment period")))?;
            names.push(format!("outcome_{t}"));
            columns.push((0..n).map(|u| panel.series(u)[j]).collect());
        }
        let k = columns.len();
        Ok((names, Matrix::from_fn(n, k, |u, i| columns[i][u])))
    }
}

/// Column-wise `(v − mean)/sd` with the sample standard deviation; constant
/// columns are only centered.
pub fn standardize_columns(m: &Matrix) -> Matrix {
    let n = m.rows() as f64;
    let mut out = m.clone();
    for j in 0..m.cols() {
        let col = m.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let sd = var.sqrt();
        for (i, v) in col.iter().enumerate() {
            out.row_mut(i)[j] = if sd > 0.0 { (v - mean) / sd } else { v - mean };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodChoice {
    Unmatched,
    Synthetic {
        predictors: PredictorSpec,
        pre_outcomes: bool,
        predictor_weight: f64,
    },
    NnL2,
    NnTrend(TrendDistance),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub method: MethodChoice,
    pub adjustment: AdjustmentSource,
    pub centering: Centering,
    pub alpha: f64,
    pub deltas: Vec<f64>,
    pub sensitivity_rhos: Vec<f64>,
    pub sensitivity_s2s: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            method: MethodChoice::Synthetic {
                predictors: PredictorSpec::default(),
                pre_outcomes: true,
                predictor_weight: 1.0,
            },
            adjustment: AdjustmentSource::Gee {
                time_varying: Vec::new(),
                unit_predictors: true,
                rho: None,
                s2: None,
            },
            centering: Centering::OwnUnit,
            alpha: 0.05,
            deltas: SensitivityGrid::default_deltas(),
            sensitivity_rhos: Vec::new(),
            sensitivity_s2s: Vec::new(),
        }
    }
}

fn parse_bool(config: &Config, key: &str) -> Result<Option<bool>> {
    match config.get(key) {
        None => Ok(None),
        Some("true" | "yes" | "1") => Ok(Some(true)),
        Some("false" | "no" | "0") => Ok(Some(false)),
        Some(v) => Err(Error::Config(format!("key `{key}`: expected true or false, got `{v}`"))),
    }
}

impl AnalysisConfig {
    pub fn from_config(config: &Config) -> Result<Self> {
        config.check_keys(CONFIG_KEYS)?;
        let d = AnalysisConfig::default();

        let predictors = PredictorSpec {
            covariates: config.list("sc_covariates")?,
            window: match config.list::<i64>("sc_window")?.as_slice() {
                [] => None,
                [a, b] if a <= b => Some((*a, *b)),
                _ => return Err(Error::Config("`sc_window` must be `start, end`".into())),
            },
            outcome_times: config.list("sc_outcome_years")?,
        };
        let method = match config.get("method").unwrap_or("sc") {
            "sc" | "synthetic" => MethodChoice::Synthetic {
                pre_outcomes: parse_bool(config, "sc_pre_outcomes")?.unwrap_or(predictors.is_empty()),
                predictor_weight: config.parse_or("sc_predictor_weight", 1.0)?,
                predictors,
            },
            "unmatched" => MethodChoice::Unmatched,
            "nn1" | "nn_l2" => MethodChoice::NnL2,
            "nn2" | "nn_trend" => MethodChoice::NnTrend(match config.get("nn_trend_distance") {
                None | Some("slope") => TrendDistance::SlopeOnly,
                Some("intercept_slope") => TrendDistance::InterceptAndSlope,
                Some(v) => return Err(Error::Config(format!("unknown nn_trend_distance `{v}`"))),
            }),
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        };

        let adjustment = match config.get("adjustment").unwrap_or("gee") {
            "gee" => AdjustmentSource::Gee {
                time_varying: config.list("gee_covariates")?,
                unit_predictors: parse_bool(config, "gee_unit_predictors")?.unwrap_or(true),
                rho: config.parse("rho")?,
                s2: config.parse("s2")?,
            },
            "explicit" => AdjustmentSource::Explicit {
                mean_model: match config.get("mean_model").unwrap_or("pre_mean") {
                    "pre_mean" => ExplicitMean::PreMean,
                    "pre_trend" => ExplicitMean::PreTrend,
                    v => return Err(Error::Config(format!("unknown mean_model `{v}`"))),
                },
                rho: config
                    .parse("rho")?
                    .ok_or_else(|| Error::Config("explicit adjustment needs `rho`".into()))?,
                s2: config.parse_or("s2", 1.0)?,
            },
            v => return Err(Error::Config(format!("unknown adjustment `{v}`"))),
        };

        let centering = match config.get("centering").unwrap_or("own") {
            "own" => Centering::OwnUnit,
            "treated" => Centering::TreatedUnit,
            v => return Err(Error::Config(format!("unknown centering `{v}`"))),
        };

        let deltas = {
            let listed: Vec<f64> = config.list("deltas")?;
            if !listed.is_empty() {
                listed
            } else {
                let lo = config.parse_or("delta_min", -5.0)?;
                let hi = config.parse_or("delta_max", 5.0)?;
                let steps = config.parse_or("delta_steps", 21usize)?;
                SensitivityGrid::linspace(lo, hi, steps).map_err(|e| Error::Config(e.to_string()))?
            }
        };

        Ok(AnalysisConfig {
            method,
            adjustment,
            centering,
            alpha: config.parse_or("alpha", d.alpha)?,
            deltas,
            sensitivity_rhos: config.list("sensitivity_rhos")?,
            sensitivity_s2s: config.list("sensitivity_s2s")?,
        })
    }

    /// Matching method with predictors evaluated on `panel`.
    pub fn match_method(&self, panel: &Panel) -> Result<MatchMethod> {
        Ok(match &self.method {
            MethodChoice::Unmatched => MatchMethod::Unmatched,
            MethodChoice::NnL2 => MatchMethod::NnL2,
            MethodChoice::NnTrend(d) => MatchMethod::NnTrend(*d),
            MethodChoice::Synthetic {
                predictors,
                pre_outcomes,
                predictor_weight,
            } => {
                let preds = if predictors.is_empty() {
                    None
                } else {
                    let (names, raw) = predictors.raw_values(panel)?;
                    let k = names.len();
                    Some(Predictors {
                        names,
                        values: standardize_columns(&raw),
                        row_weights: vec![*predictor_weight; k],
                    })
                };
                MatchMethod::Synthetic(SyntheticOptions {
                    include_pre_outcomes: *pre_outcomes,
                    outcome_row_weight: 1.0,
                    predictors: preds,
                })
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub unit_ids: Vec<String>,
    pub treated: usize,
    pub method: String,
    pub att: AttResult,
    pub placebo_unadjusted: PlaceboDistribution,
    pub placebo_adjusted: PlaceboDistribution,
    pub gee: Option<GeeFit>,
    /// Residual moments under the adjustment's mean model.
    pub residual: Option<ResidualAr1>,
    pub spec: Ar1ErrorSpec,
    pub alpha: f64,
    pub sensitivity: Vec<SensitivityRow>,
    pub robustness_threshold: Option<f64>,
}

/// Runs the full pipeline. Errors carry the failing stage.
pub fn analyze(panel: &Panel, config: &AnalysisConfig, exec: Exec) -> Result<AnalysisReport> {
    let method = config.match_method(panel).map_err(|e| e.at_stage("predictors"))?;
    let weights = estimate_weights(panel, &method).map_err(|e| e.at_stage("matching"))?;

    let (model, spec, gee, residual) = match &config.adjustment {
        AdjustmentSource::Gee {
            time_varying,
            unit_predictors,
            rho,
            s2,
        } => {
            let mut design = GeeDesign {
                time_varying: time_varying.clone(),
                ..Default::default()
            };
            if *unit_predictors {
                if let MethodChoice::Synthetic { predictors, .. } = &config.method {
                    if !predictors.is_empty() {
                        let (names, raw) = predictors.raw_values(panel).map_err(|e| e.at_stage("gee"))?;
                        design.unit_level = names
                            .into_iter()
                            .enumerate()
                            .map(|(k, n)| (n, raw.column(k)))
                            .collect();
                    }
                }
            }
            let fit = gee_ar1_fit(panel, &design).map_err(|e| e.at_stage("gee"))?;
            let res = residual_ar1_estimates(panel, &fit.model).map_err(|e| e.at_stage("residual estimates"))?;
            let spec = Ar1ErrorSpec::new(s2.unwrap_or(res.s2), rho.unwrap_or(res.rho))
                .map_err(|e| e.at_stage("residual estimates"))?;
            (fit.model.clone(), spec, Some(fit), Some(res))
        }
        AdjustmentSource::Explicit { mean_model, rho, s2 } => {
            let model = match mean_model {
                ExplicitMean::PreMean => MeanModel::from_pre_means(panel),
                ExplicitMean::PreTrend => MeanModel::from_pre_trends(panel),
            }
            .map_err(|e| e.at_stage("mean model"))?;
            let spec = Ar1ErrorSpec::new(*s2, *rho).map_err(|e| e.at_stage("mean model"))?;
            let res = residual_ar1_estimates(panel, &model).ok();
            (model, spec, None, res)
        }
    };

    let adj = RtmAdjustment {
        mean_model: model.clone(),
        spec,
        centering: config.centering,
    };
    let att = adjusted_att_with(panel, &weights, &adj).map_err(|e| e.at_stage("adjusted estimate"))?;
    let placebo_unadjusted = placebo_test(panel, &EstimatorConfig::unadjusted(method.clone()), exec)
        .map_err(|e| e.at_stage("placebo"))?;
    let placebo_adjusted = placebo_test(
        panel,
        &EstimatorConfig {
            method: method.clone(),
            adjustment: Some(adj),
        },
        exec,
    )
    .map_err(|e| e.at_stage("adjusted placebo"))?;

    let grid = SensitivityGrid {
        deltas: config.deltas.clone(),
        rhos: config.sensitivity_rhos.clone(),
        s2s: config.sensitivity_s2s.clone(),
        base_model: model,
        base_spec: spec,
        centering: config.centering,
    };
    let sensitivity = sensitivity_sweep(panel, &grid, &method, config.alpha, exec)
        .map_err(|e| e.at_stage("sensitivity"))?;
    let threshold = if sensitivity.iter().any(|r| r.delta == 0.0) {
        robustness_threshold(&sensitivity, config.alpha).map_err(|e| e.at_stage("sensitivity"))?
    } else {
        None
    };

    Ok(AnalysisReport {
        unit_ids: panel.unit_ids().to_vec(),
        treated: panel.treated(),
        method: method.label().to_string(),
        att,
        placebo_unadjusted,
        placebo_adjusted,
        gee,
        residual,
        spec,
        alpha: config.alpha,
        sensitivity,
        robustness_threshold: threshold,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AnalysisReport {
    /// Writes `weights.csv`, `att.csv`, `placebo.csv`, `gee.csv` and
    /// `sensitivity.csv` into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;

        let mut w = csv::Writer::from_writer(create(dir, "weights.csv")?);
        w.write_record(["unit_id", "weight"])?;
        for (k, u) in controls_of(self.unit_ids.len(), self.treated).into_iter().enumerate() {
            w.write_record([self.unit_ids[u].clone(), self.att.weights.weights()[k].to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_writer(create(dir, "att.csv")?);
        w.write_record(["statistic", "value"])?;
        let n = self.unit_ids.len();
        let rows: Vec<(&str, String)> = vec![
            ("treated", self.unit_ids[self.treated].clone()),
            ("method", self.method.clone()),
            ("theta_obs", self.att.theta_obs.to_string()),
            ("theta_rtm", self.att.theta_rtm.to_string()),
            ("theta_adj", self.att.theta_adj.to_string()),
            ("n_units", n.to_string()),
            ("p_unadjusted", self.placebo_unadjusted.p_value().to_string()),
            ("p_unadjusted_count", self.placebo_unadjusted.exceed_count().to_string()),
            ("p_adjusted", self.placebo_adjusted.p_value().to_string()),
            ("p_adjusted_count", self.placebo_adjusted.exceed_count().to_string()),
            ("alpha", self.alpha.to_string()),
            ("rho", self.spec.rho().to_string()),
            ("s2", self.spec.sigma2().to_string()),
            ("residual_rho", opt(self.residual.as_ref().map(|r| r.rho))),
            ("residual_s2", opt(self.residual.as_ref().map(|r| r.s2))),
            ("robustness_threshold", opt(self.robustness_threshold)),
        ];
        for (k, v) in rows {
            w.write_record([k.to_string(), v])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_writer(create(dir, "placebo.csv")?);
        w.write_record(["unit_id", "treated", "theta_obs", "theta_adj"])?;
        for u in 0..n {
            w.write_record([
                self.unit_ids[u].clone(),
                (u == self.treated).to_string(),
                self.placebo_unadjusted.estimates()[u].to_string(),
                self.placebo_adjusted.estimates()[u].to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_writer(create(dir, "gee.csv")?);
        w.write_record(["term", "coefficient", "robust_se"])?;
        if let Some(g) = &self.gee {
            for (i, t) in g.terms.iter().enumerate() {
                w.write_record([t.clone(), g.coefficients[i].to_string(), g.robust_se[i].to_string()])?;
            }
            w.write_record(["working_rho".to_string(), g.rho.to_string(), String::new()])?;
            w.write_record(["iterations".to_string(), g.iterations.to_string(), String::new()])?;
            w.write_record(["converged".to_string(), g.converged.to_string(), String::new()])?;
        }
        w.flush()?;

        write_sensitivity(&self.sensitivity, create(dir, "sensitivity.csv")?)
    }
}

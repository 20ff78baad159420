//! Matched difference-in-difference estimation with a regression-to-the-mean
//! correction, placebo inference, and the Monte Carlo and sensitivity tools
//! built on them.

pub mod analysis;
pub mod did;
pub mod error;
pub mod exec;
pub mod inference;
pub mod linalg;
pub mod matching;
pub mod panel;
pub mod panel_io;
pub mod sensitivity;
pub mod simulate;
pub mod stats;

pub use did::{adjusted_att, adjusted_att_with, did_estimate, AttResult, Centering, RtmAdjustment};
pub use error::{Error, Result};
pub use exec::Exec;
pub use inference::{
    estimate_weights, placebo_test, reject_null, EstimatorConfig, MatchMethod, PlaceboDistribution,
    Predictors, SyntheticOptions,
};
pub use matching::{ControlWeights, TrendDistance, WeightTag};
pub use panel::{Covariate, Panel};
pub use panel_io::{load_panel, Config, CsvSchema};
pub use sensitivity::{robustness_threshold, sensitivity_sweep, SensitivityGrid, SensitivityRow};
pub use simulate::{simulate_panel, ErrorFamily, ExperimentRow, MethodSpec, ScenarioConfig};
pub use stats::{Ar1ErrorSpec, MeanModel, RngStream};

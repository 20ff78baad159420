//! Sampling and regression primitives.

pub mod ar1;
pub mod gee;
pub mod mean_model;
pub mod ols;
pub mod rng;
pub mod sampling;

pub use ar1::{build_ar1_cov, cholesky, Ar1ErrorSpec, CholeskyFactor, CovMatrix};
pub use gee::{gee_ar1_fit, residual_ar1_estimates, GeeDesign, GeeFit, ResidualAr1};
pub use mean_model::{MeanKind, MeanModel};
pub use ols::{linear_trend, ols_fit};
pub use rng::RngStream;
pub use sampling::{sample_mvn, sample_mvt};

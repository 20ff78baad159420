//! Multivariate normal and multivariate t draws.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::ar1::CholeskyFactor;
use super::rng::RngStream;
use crate::error::{Error, Result};

/// `mean + L·z` with `z` i.i.d. standard normal drawn from `rng`.
pub fn sample_mvn(mean: &[f64], factor: &CholeskyFactor, rng: &mut RngStream) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mean.len()];
    sample_mvn_into(mean, factor, rng, &mut out)?;
    Ok(out)
}

pub(crate) fn sample_mvn_into(
    mean: &[f64],
    factor: &CholeskyFactor,
    rng: &mut RngStream,
    out: &mut [f64],
) -> Result<()> {
    let n = factor.dim();
    if mean.len() != n || out.len() != n {
        return Err(Error::DimensionMismatch {
            what: "mean length vs factor dimension",
            expected: n,
            got: mean.len(),
        });
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    factor.apply(&z, out);
    for (o, m) in out.iter_mut().zip(mean) {
        *o += m;
    }
    Ok(())
}

/// Multivariate t with scale matrix `L·Lᵀ`: `mean + L·z / sqrt(w/df)` with
/// `w ~ χ²(df)` drawn after `z`. `df = ∞` gives exactly [`sample_mvn`].
///
/// The marginal variance is `df/(df−2)` times the scale-matrix diagonal.
/// With `rescale` set (and `df > 2`) draws are shrunk by `sqrt((df−2)/df)`
/// so the marginal variance equals the scale-matrix diagonal.
pub fn sample_mvt(
    mean: &[f64],
    factor: &CholeskyFactor,
    df: f64,
    rescale: bool,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mean.len()];
    sample_mvt_into(mean, factor, df, rescale, rng, &mut out)?;
    Ok(out)
}

pub(crate) fn sample_mvt_into(
    mean: &[f64],
    factor: &CholeskyFactor,
    df: f64,
    rescale: bool,
    rng: &mut RngStream,
    out: &mut [f64],
) -> Result<()> {
    if df.is_nan() || df <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "degrees of freedom must be positive, got {df}"
        )));
    }
    if df == f64::INFINITY {
        return sample_mvn_into(mean, factor, rng, out);
    }
    let n = factor.dim();
    if mean.len() != n || out.len() != n {
        return Err(Error::DimensionMismatch {
            what: "mean length vs factor dimension",
            expected: n,
            got: mean.len(),
        });
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let chi2 = ChiSquared::new(df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let w: f64 = chi2.sample(rng);
    let mut scale = 1.0 / (w / df).sqrt();
    if rescale && df > 2.0 {
        scale *= ((df - 2.0) / df).sqrt();
    }
    factor.apply(&z, out);
    for (o, m) in out.iter_mut().zip(mean) {
        *o = m + *o * scale;
    }
    Ok(())
}

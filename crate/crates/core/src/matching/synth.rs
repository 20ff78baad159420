//! Synthetic control weights: least squares over the probability simplex.
//!
//! Accelerated projected gradient (FISTA) with exact Euclidean projection onto
//! the simplex and a function-value restart that keeps the accepted iterates
//! monotone. The step is `1/L` with `L = 2·λmax(ÃÃᵀ)`, computed on the small
//! `rows × rows` Gram matrix.

use super::{ControlWeights, WeightTag};
use crate::error::{Error, Result};
use crate::linalg::{dot, sym_max_eigenvalue, Matrix};

pub const SC_STALL_TOL: f64 = 1e-10;
pub const SC_STALL_ITERS: usize = 20;
pub const SC_MAX_ITER: usize = 50_000;

/// Solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    /// `Σ_j ω_j (treated_j − Σ_k w_k control_jk)²` at the returned weights.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes the row-weighted squared misfit between `treated_pre` and a
/// convex combination of the columns of `control_pre` (`rows × controls`).
/// Starts from uniform weights.
pub fn fit_synthetic_control(
    control_pre: &Matrix,
    treated_pre: &[f64],
    row_weights: Option<&[f64]>,
) -> Result<(ControlWeights, FitReport)> {
    let (m, n) = (control_pre.rows(), control_pre.cols());
    if n == 0 {
        return Err(Error::InvalidParameter("empty control set".into()));
    }
    if m == 0 {
        return Err(Error::InsufficientData("no pre-treatment rows".into()));
    }
    if treated_pre.len() != m {
        return Err(Error::DimensionMismatch {
            what: "treated rows vs control rows",
            expected: m,
            got: treated_pre.len(),
        });
    }
    if !control_pre.is_finite() || treated_pre.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("synthetic control input"));
    }
    if let Some(rw) = row_weights {
        if rw.len() != m {
            return Err(Error::DimensionMismatch {
                what: "row weights",
                expected: m,
                got: rw.len(),
            });
        }
        if rw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "row weights must be finite and nonnegative".into(),
            ));
        }
    }

    let (a, b) = match row_weights {
        None => (control_pre.clone(), treated_pre.to_vec()),
        Some(rw) => {
            let s: Vec<f64> = rw.iter().map(|w| w.sqrt()).collect();
            (
                Matrix::from_fn(m, n, |i, j| s[i] * control_pre[(i, j)]),
                treated_pre.iter().zip(&s).map(|(v, s)| v * s).collect(),
            )
        }
    };
    let (w, report) = solve(&a, &b);
    Ok((ControlWeights::new(w, WeightTag::Synthetic)?, report))
}

fn objective(ax: &[f64], b: &[f64]) -> f64 {
    ax.iter().zip(b).map(|(p, t)| (t - p).powi(2)).sum()
}

fn apply(a: &Matrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(a.row(i), x);
    }
}

fn solve(a: &Matrix, b: &[f64]) -> (Vec<f64>, FitReport) {
    let (m, n) = (a.rows(), a.cols());
    let gram = Matrix::from_fn(m, m, |i, j| dot(a.row(i), a.row(j)));
    let lipschitz = 2.0 * sym_max_eigenvalue(&gram);

    let mut x = vec![1.0 / n as f64; n];
    let mut ax = vec![0.0; m];
    apply(a, &x, &mut ax);
    let mut f = objective(&ax, b);
    if !(lipschitz > 0.0) || n == 1 {
        // every column is zero (or only one candidate): nothing to optimize
        return (
            x,
            FitReport {
                objective: f,
                iterations: 0,
                converged: true,
            },
        );
    }
    let step = 1.0 / lipschitz;

    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0f64;
    let mut momentum = false;
    let mut x_new = vec![0.0; n];
    let mut ax_new = vec![0.0; m];
    let mut grad = vec![0.0; n];
    let mut resid = vec![0.0; m];
    let mut scratch = Vec::with_capacity(n);
    let mut stall = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < SC_MAX_ITER {
        iterations += 1;
        for i in 0..m {
            resid[i] = ay[i] - b[i];
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..m {
            let r = 2.0 * resid[i];
            for (g, aij) in grad.iter_mut().zip(a.row(i)) {
                *g += r * aij;
            }
        }
        for k in 0..n {
            x_new[k] = y[k] - step * grad[k];
        }
        project_in_place(&mut x_new, &mut scratch);
        apply(a, &x_new, &mut ax_new);
        let f_new = objective(&ax_new, b);

        if f_new > f {
            if momentum {
                // restart from the last accepted iterate
                t = 1.0;
                momentum = false;
                y.copy_from_slice(&x);
                ay.copy_from_slice(&ax);
                continue;
            }
            // a plain gradient step failed to descend: rounding floor reached
            stall += 1;
            if stall >= SC_STALL_ITERS {
                converged = true;
                break;
            }
            continue;
        }

        let improvement = f - f_new;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for k in 0..n {
            y[k] = x_new[k] + beta * (x_new[k] - x[k]);
        }
        for i in 0..m {
            ay[i] = ax_new[i] + beta * (ax_new[i] - ax[i]);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut ax, &mut ax_new);
        f = f_new;
        t = t_next;
        momentum = true;

        if improvement < SC_STALL_TOL {
            stall += 1;
            if stall >= SC_STALL_ITERS {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }

    (
        x,
        FitReport {
            objective: f,
            iterations,
            converged,
        },
    )
}

/// Euclidean projection onto `{w ≥ 0, Σw = 1}` (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_in_place(&mut out, &mut Vec::new());
    out
}

fn project_in_place(v: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(v);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in scratch.iter().enumerate() {
        cum += u;
        let cand = (cum - 1.0) / (j + 1) as f64;
        if u - cand > 0.0 {
            theta = cand;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

//! Checks against independent computations: brute-force searches, closed
//! forms, hand loops, and recovery of known simulation parameters.

use rtmdid_core::linalg::Matrix;
use rtmdid_core::matching::fit_synthetic_control;
use rtmdid_core::simulate::{run_experiment, MethodSpec};
use rtmdid_core::stats::{build_ar1_cov, cholesky, gee_ar1_fit, residual_ar1_estimates, sample_mvn, GeeDesign};
use rtmdid_core::*;

fn objective(a: &Matrix, b: &[f64], w: &[f64]) -> f64 {
    (0..a.rows())
        .map(|i| {
            let fit: f64 = a.row(i).iter().zip(w).map(|(x, y)| x * y).sum();
            (b[i] - fit).powi(2)
        })
        .sum()
}

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let spec = Ar1ErrorSpec::new(1.0, 0.0).unwrap();
    let f = cholesky(&build_ar1_cov(cols, &spec).unwrap()).unwrap();
    let data = (0..rows)
        .flat_map(|r| {
            let mut rng = RngStream::new(seed, r as u64);
            sample_mvn(&vec![0.0; cols], &f, &mut rng).unwrap()
        })
        .collect();
    Matrix::from_row_major(rows, cols, data).unwrap()
}

#[test]
fn synthetic_fit_matches_simplex_grid_search() {
    let steps = 400;
    for seed in 0..20 {
        let a = normal_matrix(5, 3, seed);
        let b = normal_matrix(1, 5, seed + 1000).row(0).to_vec();
        let (w, _) = fit_synthetic_control(&a, &b, None).unwrap();
        let solver = objective(&a, &b, w.weights());
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let g = [i as f64, j as f64, (steps - i - j) as f64].map(|v| v / steps as f64);
                best = best.min(objective(&a, &b, &g));
            }
        }
        assert!(solver <= best + 1e-10, "seed {seed}: solver {solver} vs grid {best}");
        // the grid is fine enough that it lands close to the optimum
        assert!(best - solver < 1e-3 * (1.0 + solver), "seed {seed}: grid {best} vs {solver}");
    }
}

#[test]
fn synthetic_fit_satisfies_optimality_conditions() {
    // on the simplex, every active weight has the smallest gradient entry
    for seed in 0..30 {
        let n = 40;
        let a = normal_matrix(4, n, seed);
        let b = normal_matrix(1, 4, seed + 500).row(0).to_vec();
        let (w, rep) = fit_synthetic_control(&a, &b, None).unwrap();
        assert!(rep.converged);
        let resid: Vec<f64> = (0..4)
            .map(|i| a.row(i).iter().zip(w.weights()).map(|(x, y)| x * y).sum::<f64>() - b[i])
            .collect();
        let grad: Vec<f64> = (0..n).map(|k| 2.0 * (0..4).map(|i| a[(i, k)] * resid[i]).sum::<f64>()).collect();
        let gmin = grad.iter().cloned().fold(f64::INFINITY, f64::min);
        for (k, (&wk, &gk)) in w.weights().iter().zip(&grad).enumerate() {
            assert!(gk >= gmin - 1e-9);
            if wk > 1e-4 {
                assert!(gk - gmin < 1e-4, "seed {seed}, control {k}: weight {wk}, gradient gap {}", gk - gmin);
            }
        }
    }
}

#[test]
fn duplicated_controls_share_weight_without_changing_fit() {
    let a = normal_matrix(6, 3, 7);
    let b = normal_matrix(1, 6, 8).row(0).to_vec();
    let (w, _) = fit_synthetic_control(&a, &b, None).unwrap();
    let dup = Matrix::from_fn(6, 4, |i, k| a[(i, k.min(2))]);
    let (wd, _) = fit_synthetic_control(&dup, &b, None).unwrap();
    let merged = [wd.weights()[0], wd.weights()[1], wd.weights()[2] + wd.weights()[3]];
    assert!((objective(&a, &b, w.weights()) - objective(&a, &b, &merged)).abs() < 1e-9);
    for (x, y) in w.weights().iter().zip(merged) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

fn random_panel(n: usize, t: usize, tau0: usize, seed: u64) -> Panel {
    Panel::from_outcomes(normal_matrix(n, t, seed), 0, tau0).unwrap()
}

fn closed_form_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let tbar = (n + 1.0) / 2.0;
    let ybar = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dt = (i + 1) as f64 - tbar;
        sxy += dt * (v - ybar);
        sxx += dt * dt;
    }
    sxy / sxx
}

#[test]
fn nearest_neighbours_match_brute_force() {
    for seed in 0..50 {
        let panel = random_panel(12, 8, 4, seed);
        let pre = |u: usize| &panel.series(u)[..4];
        let controls: Vec<usize> = (1..12).collect();

        let l2: Vec<f64> = controls
            .iter()
            .map(|&u| pre(u).iter().zip(pre(0)).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        let w = estimate_weights(&panel, &MatchMethod::NnL2).unwrap();
        let best = (0..11).min_by(|&i, &j| l2[i].total_cmp(&l2[j])).unwrap();
        assert_eq!(w.selected(), Some(best));

        let s0 = closed_form_slope(pre(0));
        let gaps: Vec<f64> = controls.iter().map(|&u| (closed_form_slope(pre(u)) - s0).abs()).collect();
        let w = estimate_weights(&panel, &MatchMethod::NnTrend(TrendDistance::SlopeOnly)).unwrap();
        let best = (0..11).min_by(|&i, &j| gaps[i].total_cmp(&gaps[j])).unwrap();
        assert_eq!(w.selected(), Some(best));
    }
}

#[test]
fn placebo_matches_hand_relabelling() {
    let methods = [
        MatchMethod::Unmatched,
        MatchMethod::synthetic(),
        MatchMethod::NnL2,
        MatchMethod::NnTrend(TrendDistance::SlopeOnly),
    ];
    for seed in 0..10 {
        let panel = random_panel(9, 7, 4, seed);
        for m in &methods {
            let dist = placebo_test(&panel, &EstimatorConfig::unadjusted(m.clone()), Exec::Sequential).unwrap();
            let hand: Vec<f64> = (0..9)
                .map(|u| {
                    let p = panel.relabelled(u).unwrap();
                    did_estimate(&p, &estimate_weights(&p, m).unwrap()).unwrap()
                })
                .collect();
            for (a, b) in dist.estimates().iter().zip(&hand) {
                assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", m.label());
            }
            let count = hand.iter().filter(|e| e.abs() >= hand[0].abs()).count();
            assert_eq!(dist.exceed_count(), count);
            assert_eq!(dist.p_value(), count as f64 / 9.0);
        }
    }
}

#[test]
fn unmatched_did_by_explicit_loop() {
    let panel = random_panel(6, 9, 5, 3);
    let w = ControlWeights::uniform(5).unwrap();
    let mut pre = 0.0;
    let mut post = 0.0;
    for t in 0..9 {
        let mut c = 0.0;
        for u in 1..6 {
            c += panel.series(u)[t] / 5.0;
        }
        let d = panel.series(0)[t] - c;
        if t < 5 {
            pre += d / 5.0;
        } else {
            post += d / 4.0;
        }
    }
    assert!((did_estimate(&panel, &w).unwrap() - (post - pre)).abs() < 1e-13);
}

fn ar1_panel(n: usize, t: usize, spec: &Ar1ErrorSpec, mean: impl Fn(usize) -> f64, seed: u64) -> Panel {
    let f = cholesky(&build_ar1_cov(t, spec).unwrap()).unwrap();
    let mu: Vec<f64> = (0..t).map(mean).collect();
    let data = (0..n)
        .flat_map(|u| sample_mvn(&mu, &f, &mut RngStream::new(seed, u as u64)).unwrap())
        .collect();
    Panel::from_outcomes(Matrix::from_row_major(n, t, data).unwrap(), 0, t / 2).unwrap()
}

#[test]
fn gee_recovers_strong_autocorrelation() {
    let spec = Ar1ErrorSpec::new(14.6, 0.9).unwrap();
    let (mut rho, mut s2) = (0.0, 0.0);
    let runs = 20;
    for seed in 0..runs {
        let panel = ar1_panel(39, 31, &spec, |t| 120.0 - 0.13 * t as f64, seed);
        let fit = gee_ar1_fit(&panel, &GeeDesign::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.rho - 0.9).abs() < 0.06, "seed {seed}: rho {}", fit.rho);
        rho += fit.rho / runs as f64;
        s2 += fit.s2 / runs as f64;
    }
    assert!((rho - 0.9).abs() < 0.03, "mean rho {rho}");
    assert!((s2 / 14.6 - 1.0).abs() < 0.15, "mean s2 {s2}");
}

#[test]
fn residual_moments_recover_known_process() {
    let spec = Ar1ErrorSpec::new(2.0, 0.5).unwrap();
    let panel = ar1_panel(100, 8, &spec, |_| 3.0, 11);
    let model = MeanModel::constant(vec![3.0; 100], 8).unwrap();
    let r = residual_ar1_estimates(&panel, &model).unwrap();
    assert!((r.rho - 0.5).abs() < 0.05, "rho {}", r.rho);
    assert!((r.s2 / 2.0 - 1.0).abs() < 0.1, "s2 {}", r.s2);
    assert_eq!(r.n_residuals, 99 * 8 + 4);
}

#[test]
fn adjusted_synthetic_estimate_is_centred_under_the_null() {
    let config = ScenarioConfig {
        n_reps: 2000,
        ..ScenarioConfig::new(1.0, 20_240_607)
    };
    let methods = vec![
        MethodSpec::new("sc", MatchMethod::synthetic(), false),
        MethodSpec::new("sc_adj", MatchMethod::synthetic(), true),
    ];
    let rows = run_experiment(&[config], &methods, Exec::Parallel).unwrap();
    let (raw, adj) = (&rows[0], &rows[1]);
    assert!(adj.mean_theta.abs() < 0.05, "adjusted mean {}", adj.mean_theta);
    // the matched controls were picked partly for their noise and drift back
    assert!(raw.mean_theta.abs() > 3.0 * raw.theta_se(), "raw mean {}", raw.mean_theta);
}

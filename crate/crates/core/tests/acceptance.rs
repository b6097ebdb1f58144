//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use periodic_sir::contrast::{contrast, contrast_gradient, linear_solve_alpha, ContrastConfig, ContrastForm};
use periodic_sir::estimator::{lsgd_estimate, pgd_alpha, BoxConstraints, EstimatorConfig};
use periodic_sir::experiment::pipeline::{draw_true_theta, run_theory};
use periodic_sir::experiment::{self, RunConfig};
use periodic_sir::levy::{sample_lambda, LevyPathNoise};
use periodic_sir::rng::{child_stream, derive_seed};
use periodic_sir::simulator::{simulate_sde, solve_ode, ObservationGrid, Trajectory};
use periodic_sir::theory::{brownian_limit_covariance, information_matrix, rate_experiment, LimitOptions, LimitSampler, RateSettings};
use periodic_sir::{ModelKind, SirParams, SirState, ThetaParams};

const MASTER: u64 = 20_240_601;

fn reference_theta() -> ThetaParams {
    ThetaParams::first_order(0.26836304, 0.15114833, 0.0621514, 0.096762).unwrap()
}

fn numbers_s0() -> SirState {
    SirState::new(2.3, 0.19, 0.25)
}

fn proportions_s0() -> SirState {
    SirState::new(0.82, 0.07, 0.11)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn simulate(model: ModelKind, theta: &ThetaParams, eps: f64, s0: SirState, seed: u64) -> Trajectory {
    let params = match model {
        ModelKind::Numbers => SirParams::numbers_default(),
        ModelKind::Proportions => SirParams::proportions_default(),
    }
    .with_eps(eps);
    let rate = sample_lambda(&mut child_stream(seed, &[0]));
    let noise = LevyPathNoise::sample(derive_seed(seed, &[1]), rate, 1.0, model.driver_dim()).unwrap();
    simulate_sde(model, theta, &params, s0, ObservationGrid::default(), &noise).unwrap()
}

fn conservation() -> Outcome {
    let eps_levels = [0.3, 0.1, 0.01, 0.001];
    let worst = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let theta = draw_true_theta(1, &mut child_stream(MASTER, &[1, i]));
            let traj = simulate(ModelKind::Proportions, &theta, eps_levels[i as usize % 4], proportions_s0(), derive_seed(MASTER, &[1, i, 1]));
            traj.states.iter().map(|s| (s.total() - 1.0).abs()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    outcome(worst <= 1e-10, format!("max |X+Y+Z-1| = {worst:.2e} over 1000 paths"))
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn gradient_check() -> Outcome {
    let errors: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = child_stream(MASTER, &[2, i]);
            let (model, form, s0) = match i % 3 {
                0 => (ModelKind::Numbers, ContrastForm::Weighted, numbers_s0()),
                1 => (ModelKind::Numbers, ContrastForm::Plain, numbers_s0()),
                _ => (ModelKind::Proportions, ContrastForm::Plain, proportions_s0()),
            };
            let eps = [0.3, 0.1, 0.01, 0.001][rng.random_range(0..4)];
            let truth = draw_true_theta(1, &mut rng);
            let traj = simulate(model, &truth, eps, s0, rng.random());
            let theta = draw_true_theta(1, &mut rng);
            let cfg = ContrastConfig { form, eps };
            let params = traj.meta.params;
            let g = contrast_gradient(&traj, &theta, &params, &cfg).unwrap().gradient;
            let x = theta.to_vec();
            let fd: Vec<f64> = (0..x.len())
                .map(|j| {
                    let step = if j == 0 { 1e-5 * x[0] * x[0] } else { 1e-5 * x[j].abs().max(1e-3) };
                    let eval = |d: f64| {
                        let mut y = x.clone();
                        y[j] += d;
                        contrast(&traj, &ThetaParams::from_slice(&y).unwrap(), &params, &cfg).unwrap().value
                    };
                    (eval(step) - eval(-step)) / (2.0 * step)
                })
                .collect();
            relative_error(&fd, &g)
        })
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    outcome(worst < 1e-6, format!("max relative error {worst:.2e} over 1000 pairs"))
}

fn inner_solver_oracle() -> Outcome {
    let bx = BoxConstraints::default();
    let cfg = EstimatorConfig::default();
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    let mut attempt = 0u64;
    while compared < 100 {
        attempt += 1;
        let mut rng = child_stream(MASTER, &[3, attempt]);
        let theta0 = draw_true_theta(1, &mut rng);
        let eps = [0.0, 0.01, 0.1][rng.random_range(0..3)];
        let traj = simulate(ModelKind::Numbers, &theta0, eps, numbers_s0(), rng.random());
        let contrast_cfg = ContrastConfig::weighted(eps);
        let period = (theta0.period * rng.random_range(0.9..1.1)).clamp(0.05, 1.0);
        let lin = match linear_solve_alpha(&traj, period, 1, &traj.meta.params, &contrast_cfg) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let (lo, hi) = (bx.alpha_lower(1), bx.alpha_upper(1));
        let interior = lin.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *v > l + 1e-3 && *v < h - 1e-3);
        if !interior {
            continue;
        }
        let run = pgd_alpha(&traj, period, &traj.meta.params, &contrast_cfg, &cfg, &bx).unwrap();
        let err = run.x.iter().zip(&lin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        compared += 1;
    }
    outcome(worst < 1e-6, format!("max |alpha_pgd - alpha_linear| = {worst:.2e} over 100 interior instances"))
}

fn consistency_trend(root: &Path) -> Outcome {
    let cfg = RunConfig { seed: MASTER, out: root.join("consistency"), ..RunConfig::default() };
    let summary = experiment::sweep(&cfg).unwrap();
    let medians: Vec<String> = summary.rows.iter().map(|r| format!("eps={}: {:.3e}", r.eps, r.median_l2)).collect();
    let n_ok: usize = summary.rows.iter().map(|r| r.n_ok).min().unwrap_or(0);
    outcome(
        summary.consistent && n_ok >= 100,
        format!("median |theta_hat - theta0|_2 {}; shrink {:.1}x (>= {n_ok} datasets per eps)", medians.join(", "), summary.shrink_ratio),
    )
}

fn reference_band() -> Outcome {
    let theta0 = reference_theta();
    let eps = 0.001;
    let params = SirParams::numbers_default().with_eps(eps);
    let inside = (0..50u64)
        .into_par_iter()
        .filter(|&seed| {
            let traj = simulate(ModelKind::Numbers, &theta0, eps, numbers_s0(), derive_seed(MASTER, &[5, seed]));
            let est = lsgd_estimate(
                &traj,
                &params,
                &ContrastConfig::for_model(ModelKind::Numbers, eps),
                &EstimatorConfig::default(),
                &BoxConstraints::default(),
                &mut child_stream(MASTER, &[5, seed, 1]),
            )
            .unwrap();
            let d: Vec<f64> = est.theta.to_vec().iter().zip(theta0.to_vec()).map(|(a, b)| (a - b).abs()).collect();
            d[0] < 0.005 && d[1..].iter().all(|v| *v < 0.01)
        })
        .count();
    outcome(inside >= 45, format!("{inside}/50 seeds inside the band (need 45)"))
}

fn noiseless_identifiability() -> Outcome {
    let params = SirParams::numbers_default();
    let cfg = EstimatorConfig { cells: 50, ..Default::default() };
    let errors: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|i| {
            let theta0 = draw_true_theta(1, &mut child_stream(MASTER, &[6, i]));
            let traj = simulate(ModelKind::Numbers, &theta0, 0.0, numbers_s0(), 0);
            let est = lsgd_estimate(
                &traj,
                &params,
                &ContrastConfig::plain(0.0),
                &cfg,
                &BoxConstraints::default(),
                &mut child_stream(MASTER, &[6, i, 1]),
            )
            .unwrap();
            est.theta.to_vec().iter().zip(theta0.to_vec()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect();
    let ok = errors.iter().filter(|e| **e <= 0.03).count();
    outcome(ok >= 9, format!("{ok}/10 recovered within 0.03 (sup errors {:?})", errors.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>()))
}

fn information_matrix_check() -> Outcome {
    let p = SirParams::numbers_default();
    let info = information_matrix(ModelKind::Numbers, &reference_theta(), &p, numbers_s0(), false, 2000).unwrap();
    let flat = ThetaParams::first_order(0.26836304, 0.15114833, 0.0, 0.0).unwrap();
    let singular = information_matrix(ModelKind::Numbers, &flat, &p, numbers_s0(), false, 2000).unwrap();
    let zero_period = singular.matrix.row(0).iter().chain(singular.matrix.column(0).iter()).all(|v| *v == 0.0);
    let pass = info.asymmetry() <= 1e-12 && info.min_eigenvalue() > 0.0 && zero_period && singular.inverse().is_err();
    outcome(
        pass,
        format!(
            "asymmetry {:.1e}, min eigenvalue {:.4e}; alpha1=alpha2=0: period row/column zero = {zero_period}",
            info.asymmetry(),
            info.min_eigenvalue()
        ),
    )
}

fn rate_boundedness() -> Outcome {
    let p = SirParams::numbers_default();
    let settings = RateSettings {
        eps: vec![0.01, 0.001],
        replications: 200,
        form: ContrastForm::Weighted,
        grid: ObservationGrid::default(),
        estimator: EstimatorConfig::default(),
        bounds: BoxConstraints::default(),
        limit_draws: 0,
        n_quad: 2000,
    };
    let report = rate_experiment(ModelKind::Numbers, &reference_theta(), &p, numbers_s0(), &settings, derive_seed(MASTER, &[8])).unwrap();
    let ratios: Vec<f64> = report.rows[0].iqr.iter().zip(&report.rows[1].iqr).map(|(a, b)| a / b).collect();
    let iqr_ok = ratios.iter().all(|r| (0.5..=2.0).contains(r));

    let cov = brownian_limit_covariance(ModelKind::Numbers, &reference_theta(), &p, numbers_s0(), false, 2000).unwrap();
    let sampler = LimitSampler::new(ModelKind::Numbers, &reference_theta(), &p, numbers_s0(), false, 2000).unwrap();
    let opts = LimitOptions { brownian: true, jumps: false, rate: Some(0.0) };
    let draws: Vec<Vec<f64>> = (0..10_000u64)
        .into_par_iter()
        .map(|i| sampler.sample(derive_seed(MASTER, &[8, 1, i]), &opts).unwrap())
        .collect();
    let dim = cov.nrows();
    let n = draws.len() as f64;
    let means: Vec<f64> = (0..dim).map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / n).collect();
    let mut emp = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for d in &draws {
        for i in 0..dim {
            for j in 0..dim {
                emp[(i, j)] += (d[i] - means[i]) * (d[j] - means[j]) / (n - 1.0);
            }
        }
    }
    let diag_err = (0..dim).map(|j| (emp[(j, j)] / cov[(j, j)] - 1.0).abs()).fold(0.0, f64::max);
    let frob = (&emp - &cov).norm() / cov.norm();
    let cov_ok = diag_err <= 0.1 && frob <= 0.1;
    let failures: usize = report.rows.iter().map(|r| r.failures.len()).sum();
    outcome(
        iqr_ok && cov_ok,
        format!(
            "IQR ratios eps 0.01/0.001 {:?} ({failures} failed fits); Brownian limit covariance: max diagonal error {:.1}%, Frobenius {:.1}%",
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>(),
            100.0 * diag_err,
            100.0 * frob
        ),
    )
}

fn sup_diff(a: &Trajectory, b: &Trajectory, stride_b: usize) -> f64 {
    a.states
        .iter()
        .zip(b.states.iter().step_by(stride_b))
        .flat_map(|(x, y)| x.to_array().into_iter().zip(y.to_array()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn numerical_orders() -> Outcome {
    let p = SirParams::numbers_default();
    let theta = reference_theta();
    let reference = solve_ode(ModelKind::Numbers, &theta, &p, numbers_s0(), 1.0, 100_000).unwrap();
    let rk4 = |n: usize| {
        let traj = solve_ode(ModelKind::Numbers, &theta, &p, numbers_s0(), 1.0, n).unwrap();
        sup_diff(&traj, &reference, 100_000 / n)
    };
    let rk4_ratio = rk4(10) / rk4(20);

    let em_error = |substeps: usize| {
        let grid = ObservationGrid::new(1.0, 100, substeps);
        let noise = LevyPathNoise::sample(0, 0.0, 1.0, 3).unwrap();
        let em = simulate_sde(ModelKind::Numbers, &theta, &p, numbers_s0(), grid, &noise).unwrap();
        sup_diff(&em, &reference, 1000)
    };
    let errs: Vec<f64> = [1, 2, 4, 8].iter().map(|&s| em_error(s)).collect();
    let em_ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let first_order = em_ratios.iter().all(|r| (1.6..=2.4).contains(r));
    outcome(
        (12.8..=19.2).contains(&rk4_ratio) && first_order,
        format!(
            "RK4 halving ratio {rk4_ratio:.2}; EM (eps=0) vs ODE errors {:?}, halving ratios {:?}",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            em_ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
        ),
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(root: &Path) -> Outcome {
    let run = |tag: &str| {
        let out = root.join("determinism").join(tag);
        let cfg = RunConfig {
            seed: MASTER,
            out: out.clone(),
            datasets_generated: 200,
            datasets_estimated: 20,
            rate_replications: 20,
            limit_draws: 200,
            predict_paths: 20,
            ..RunConfig::default()
        };
        experiment::sweep(&cfg).unwrap();
        experiment::prediction_study(&cfg).unwrap();
        run_theory(&cfg).unwrap();
        let files = tree(&out);
        std::fs::remove_dir_all(&out).unwrap();
        files
    };
    let a = run("run");
    let b = run("run");
    let differing: Vec<&String> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| &x.0).collect();
    let pass = a.len() == b.len() && differing.is_empty() && !a.is_empty();
    outcome(pass, format!("{} output files compared, {} differ", a.len(), differing.len()))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("conservation of the proportional model", Box::new(conservation)),
        ("analytic contrast gradient vs central differences", Box::new(gradient_check)),
        ("projected descent vs linear least squares", Box::new(inner_solver_oracle)),
        ("consistency trend across noise levels", Box::new(|| consistency_trend(root.path()))),
        ("reference parameter band at eps = 0.001", Box::new(reference_band)),
        ("noiseless identifiability", Box::new(noiseless_identifiability)),
        ("information matrix", Box::new(information_matrix_check)),
        ("rate boundedness and limit covariance", Box::new(rate_boundedness)),
        ("numerical orders of RK4 and Euler-Maruyama", Box::new(numerical_orders)),
        ("pipeline determinism", Box::new(|| determinism(root.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({}; {secs:.1}s)",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            name,
            result.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

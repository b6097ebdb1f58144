use proptest::prelude::*;
use rand::Rng;

use periodic_sir::contrast::{linear_solve_alpha, ContrastConfig, ContrastProblem};
use periodic_sir::estimator::{lsgd_estimate, pgd_alpha, projected_descent, BoxConstraints, EstimatorConfig, InnerSolver};
use periodic_sir::experiment::pipeline::draw_true_theta;
use periodic_sir::levy::{sample_lambda, LevyPathNoise};
use periodic_sir::rng::{child_stream, derive_seed};
use periodic_sir::simulator::{simulate_sde, ObservationGrid, Trajectory};
use periodic_sir::{ModelKind, SirParams, SirState, ThetaParams};

fn numbers_path(theta: &ThetaParams, eps: f64, seed: u64) -> Trajectory {
    let params = SirParams::numbers_default().with_eps(eps);
    let rate = sample_lambda(&mut child_stream(seed, &[0]));
    let noise = LevyPathNoise::sample(derive_seed(seed, &[1]), rate, 1.0, 3).unwrap();
    simulate_sde(ModelKind::Numbers, theta, &params, SirState::new(2.3, 0.19, 0.25), ObservationGrid::default(), &noise).unwrap()
}

fn random_instance(seed: u64) -> (Trajectory, ThetaParams, f64) {
    let mut rng = child_stream(seed, &[7]);
    let theta0 = draw_true_theta(1, &mut rng);
    let eps = [0.0, 0.001, 0.01, 0.1, 0.3][rng.random_range(0..5)];
    (numbers_path(&theta0, eps, rng.random()), theta0, eps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pgd_trace_never_increases(seed in any::<u64>(), period in 0.01f64..1.0) {
        let (traj, _, eps) = random_instance(seed);
        let run = pgd_alpha(&traj, period, &traj.meta.params, &ContrastConfig::weighted(eps), &EstimatorConfig::default(), &BoxConstraints::default())
            .unwrap();
        prop_assert_eq!(run.trace.len(), run.iterations + 1);
        for w in run.trace.windows(2) {
            prop_assert!(w[1] <= w[0], "trace went up: {} -> {}", w[0], w[1]);
        }
        prop_assert_eq!(*run.trace.last().unwrap(), run.value);
    }

    #[test]
    fn estimate_stays_in_box_and_beats_every_cell(seed in any::<u64>()) {
        let (traj, _, eps) = random_instance(seed);
        let bx = BoxConstraints::default();
        let cfg = EstimatorConfig { cells: 8, ..EstimatorConfig::default() };
        let est = lsgd_estimate(&traj, &traj.meta.params, &ContrastConfig::weighted(eps), &cfg, &bx, &mut child_stream(seed, &[8]))
            .unwrap();
        prop_assert!(bx.contains(&est.theta));
        prop_assert_eq!(est.cells.len(), 8);
        for c in &est.cells {
            prop_assert!(est.objective <= c.value);
        }
        let problem = ContrastProblem::new(&traj, &traj.meta.params, &ContrastConfig::weighted(eps)).unwrap();
        let direct = problem.value(&est.theta);
        prop_assert!((direct - est.objective).abs() <= 1e-9 * direct.abs().max(1e-300));
    }

    #[test]
    fn noiseless_pgd_matches_linear_solve(seed in any::<u64>()) {
        let mut rng = child_stream(seed, &[9]);
        let theta0 = draw_true_theta(1, &mut rng);
        let traj = numbers_path(&theta0, 0.0, rng.random());
        let cfg = ContrastConfig::weighted(0.0);
        let lin = linear_solve_alpha(&traj, theta0.period, 1, &traj.meta.params, &cfg).unwrap();
        let run = pgd_alpha(&traj, theta0.period, &traj.meta.params, &cfg, &EstimatorConfig::default(), &BoxConstraints::default())
            .unwrap();
        for (a, b) in run.x.iter().zip(&lin) {
            prop_assert!((a - b).abs() < 1e-6, "pgd {:?} vs linear {:?}", run.x, lin);
        }
    }
}

#[test]
fn start_at_linear_minimiser_stays_put() {
    let bx = BoxConstraints::default();
    let cfg = EstimatorConfig::default();
    let mut checked = 0;
    for seed in 0..200u64 {
        if checked == 20 {
            break;
        }
        let (traj, theta0, eps) = random_instance(seed);
        let ccfg = ContrastConfig::weighted(eps);
        let Ok(lin) = linear_solve_alpha(&traj, theta0.period, 1, &traj.meta.params, &ccfg) else { continue };
        let interior = lin.iter().zip(bx.alpha_lower(1).iter().zip(bx.alpha_upper(1))).all(|(v, (l, h))| *v > l + 1e-3 && *v < h - 1e-3);
        if !interior {
            continue;
        }
        let problem = ContrastProblem::new(&traj, &traj.meta.params, &ccfg).unwrap();
        let fixed = problem.at_period(theta0.period, 1);
        let run = projected_descent(|a| fixed.value_and_gradient(a), &lin, &bx.alpha_lower(1), &bx.alpha_upper(1), &cfg);
        let f0 = run.trace[0];
        let scale = fixed.value(&cfg.initial_alpha);
        assert!(f0 - run.value <= 1e-10 * scale, "moved downhill from the minimiser: {f0} -> {}", run.value);
        let drift = run.x.iter().zip(&lin).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-7, "drifted {drift:.2e} from the minimiser");
        checked += 1;
    }
    assert_eq!(checked, 20);
}

#[test]
fn single_linear_cell_reproduces_linear_solve() {
    let theta0 = ThetaParams::first_order(0.26836304, 0.15114833, 0.0621514, 0.096762).unwrap();
    let eps = 0.01;
    let traj = numbers_path(&theta0, eps, 11);
    let ccfg = ContrastConfig::weighted(eps);
    let cfg = EstimatorConfig {
        cells: 1,
        inner: InnerSolver::Linear,
        refine: false,
        period_range: (0.25, 0.29),
        ..EstimatorConfig::default()
    };
    let est = lsgd_estimate(&traj, &traj.meta.params, &ccfg, &cfg, &BoxConstraints::default(), &mut child_stream(11, &[1])).unwrap();
    let cell = &est.cells[0];
    assert!(cell.period >= 0.25 && cell.period <= 0.29);
    let lin = linear_solve_alpha(&traj, cell.period, 1, &traj.meta.params, &ccfg).unwrap();
    assert_eq!(cell.alphas, lin);
    assert_eq!(est.theta.to_vec()[1..], lin[..]);
    assert_eq!(est.theta.period, cell.period);
}

#[test]
fn cells_are_reported_in_index_order() {
    let theta0 = ThetaParams::first_order(0.5, 0.4, 0.1, 0.05).unwrap();
    let traj = numbers_path(&theta0, 0.01, 3);
    let cfg = EstimatorConfig { cells: 10, ..EstimatorConfig::default() };
    let est = lsgd_estimate(&traj, &traj.meta.params, &ContrastConfig::weighted(0.01), &cfg, &BoxConstraints::default(), &mut child_stream(3, &[2]))
        .unwrap();
    for (i, c) in est.cells.iter().enumerate() {
        assert_eq!(c.index, i);
        assert!(c.period >= i as f64 / 10.0 && c.period <= (i + 1) as f64 / 10.0);
    }
    assert!(est.cells.iter().all(|c| c.value >= est.cells[est.best_cell].value));
}

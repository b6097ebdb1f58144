use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use rand::Rng;

use periodic_sir::contrast::{ContrastConfig, ContrastForm};
use periodic_sir::estimator::{lsgd_estimate, BoxConstraints, EstimatorConfig};
use periodic_sir::experiment::io::{load_trajectory, save_trajectory};
use periodic_sir::experiment::pipeline::{estimates_file, read_estimates};
use periodic_sir::experiment::{batch_estimate, emit_reports, generate_datasets, prediction_study, sweep, RunConfig};
use periodic_sir::levy::{sample_lambda, LevyPathNoise};
use periodic_sir::rng::{child_stream, derive_seed};
use periodic_sir::simulator::{simulate_sde, ObservationGrid, Trajectory, TrajectoryMeta};
use periodic_sir::{ModelKind, SirParams, SirState, ThetaParams};

fn small(out: &Path, eps: Vec<f64>, estimated: usize) -> RunConfig {
    RunConfig { eps, datasets_generated: 4 * estimated, datasets_estimated: estimated, seed: 99, out: out.to_path_buf(), ..RunConfig::default() }
}

fn sorted_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn period_recovered_at_low_noise_with_fifty_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), vec![0.001], 100);
    cfg.estimator.cells = 50;
    let records = generate_datasets(&cfg).unwrap();
    let rows = batch_estimate(&records, &cfg).unwrap();
    assert_eq!(rows.len(), 100);
    let close = rows.iter().filter_map(|r| r.errors()).filter(|e| e[0].abs() < 0.02).count();
    assert!(close >= 90, "{close}/100 period estimates within 0.02");
}

#[test]
fn sweep_summary_matches_estimate_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), vec![0.3, 0.01, 0.001], 40);
    let summary = sweep(&cfg).unwrap();

    let order: Vec<f64> = summary.rows.iter().map(|r| r.eps).collect();
    assert_eq!(order, cfg.eps);

    let text = std::fs::read_to_string(dir.path().join("report/summary.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + cfg.eps.len());
    assert!(lines[0].starts_with("eps,n_ok,n_failed,median_abs_period"));

    for row in &summary.rows {
        let est = read_estimates(&dir.path().join(estimates_file(row.eps)), row.eps).unwrap();
        assert_eq!(est.len(), 40);
        let errs: Vec<Vec<f64>> = est.iter().filter_map(|r| r.errors()).collect();
        assert_eq!(row.n_ok, errs.len());
        for j in 0..4 {
            let m = sorted_median(errs.iter().map(|e| e[j].abs()).collect());
            assert!((m - row.median_abs[j]).abs() <= 1e-15 * m.max(1.0));
        }
        let l2 = sorted_median(errs.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()).collect());
        assert!((l2 - row.median_l2).abs() <= 1e-15 * l2.max(1.0));
    }

    let coarse = &summary.rows[0];
    let fine = &summary.rows[2];
    assert!(
        coarse.median_abs[0] >= 5.0 * fine.median_abs[0],
        "period error {:.3e} at eps 0.3 vs {:.3e} at eps 0.001",
        coarse.median_abs[0],
        fine.median_abs[0]
    );
    for name in ["period", "alpha0", "alpha1", "alpha2"] {
        assert!(dir.path().join(format!("report/scatter_{name}_eps_0.001.csv")).exists());
    }
    assert!(std::fs::read_to_string(dir.path().join("report/consistency.txt")).unwrap().starts_with("verdict = "));
}

#[test]
fn report_on_empty_directory_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), vec![0.1], 5);
    let err = emit_reports(dir.path(), &cfg).unwrap_err().to_string();
    assert!(err.contains(&dir.path().display().to_string()), "{err}");
}

#[test]
fn report_with_missing_level_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), vec![0.1], 5);
    let records = generate_datasets(&cfg).unwrap();
    batch_estimate(&records, &cfg).unwrap();
    let wider = RunConfig { eps: vec![0.1, 0.01], ..cfg };
    let err = emit_reports(dir.path(), &wider).unwrap_err().to_string();
    assert!(err.contains("eps_0.01"), "{err}");
}

#[test]
fn regeneration_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = generate_datasets(&small(a.path(), vec![0.1, 0.001], 6)).unwrap();
    let rb = generate_datasets(&small(b.path(), vec![0.1, 0.001], 6)).unwrap();
    assert_eq!(ra, rb);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 1 + 2 * 6 * 2);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    let other = RunConfig { seed: 100, ..small(c.path(), vec![0.1, 0.001], 6) };
    generate_datasets(&other).unwrap();
    assert_ne!(tree(c.path()), ta);
}

#[test]
fn long_periods_are_harder_to_pin_down() {
    let eps = 0.01;
    let params = SirParams::numbers_default().with_eps(eps);
    let median_err = |period: f64| {
        let theta0 = ThetaParams::first_order(period, 0.45, 0.1, 0.1).unwrap();
        let errs: Vec<f64> = (0..30u64)
            .map(|r| {
                let seed = derive_seed(5150, &[(period * 1000.0) as u64, r]);
                let rate = sample_lambda(&mut child_stream(seed, &[0]));
                let noise = LevyPathNoise::sample(derive_seed(seed, &[1]), rate, 1.0, 3).unwrap();
                let traj =
                    simulate_sde(ModelKind::Numbers, &theta0, &params, SirState::new(2.3, 0.19, 0.25), ObservationGrid::default(), &noise)
                        .unwrap();
                let est = lsgd_estimate(
                    &traj,
                    &params,
                    &ContrastConfig::weighted(eps),
                    &EstimatorConfig::default(),
                    &BoxConstraints::default(),
                    &mut child_stream(seed, &[2]),
                )
                .unwrap();
                (est.theta.period - period).abs()
            })
            .collect();
        sorted_median(errs)
    };
    let (short, long) = (median_err(0.2), median_err(0.95));
    assert!(long > short, "median period error {long:.3e} at 0.95 vs {short:.3e} at 0.2");
}

#[test]
fn prediction_table_shape_and_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { out: dir.path().to_path_buf(), predict_paths: 50, ..RunConfig::default() };
    let report = prediction_study(&cfg).unwrap();
    assert_eq!(report.rows.len(), cfg.predict_eps.len());

    let text = std::fs::read_to_string(dir.path().join("predict/parameters.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,eps,period,alpha0,alpha1,alpha2,psi,converged,sup_rel_diff");
    assert_eq!(lines.len(), 2 + cfg.predict_eps.len());
    assert!(lines[1].starts_with("true,,"));

    let fine = report.rows.iter().find(|r| r.eps == 0.001).unwrap();
    for (a, b) in fine.theta.to_vec().iter().zip(cfg.theta0.to_vec()) {
        assert!((a - b).abs() < 0.01, "estimate {:?} vs truth {:?}", fine.theta, cfg.theta0);
    }
    assert!(fine.sup_rel_diff < 0.05, "ensemble mean off by {:.3e}", fine.sup_rel_diff);

    let det = std::fs::read_to_string(dir.path().join("predict/deterministic.csv")).unwrap();
    let n_rows = (cfg.predict_horizon * cfg.n_obs as f64).round() as usize + 1;
    assert_eq!(det.lines().count(), 1 + n_rows);
    for eps in &cfg.predict_eps {
        let mean = std::fs::read_to_string(dir.path().join(format!("predict/mean_eps_{eps}.csv"))).unwrap();
        assert_eq!(mean.lines().count(), 1 + n_rows);
    }
}

fn arb_theta() -> impl Strategy<Value = ThetaParams> {
    (1e-3f64..1.0, 1e-6f64..2.0, 0.0f64..2.0, 0.0f64..2.0).prop_map(|(p, a, b, c)| ThetaParams::first_order(p, a, b, c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        seed in any::<u64>(),
        eps in prop::collection::vec(1e-6f64..1.0, 1..5),
        n_obs in 10usize..500,
        cells in 1usize..80,
        lr in 1e-6f64..1.0,
        proportions in any::<bool>(),
        theta0 in arb_theta(),
    ) {
        let model = if proportions { ModelKind::Proportions } else { ModelKind::Numbers };
        let mut cfg = RunConfig::for_model(model);
        cfg.seed = seed;
        cfg.eps = eps;
        cfg.n_obs = n_obs;
        cfg.estimator.cells = cells;
        cfg.estimator.learning_rate = lr;
        cfg.theta0 = theta0;
        cfg.out = PathBuf::from("some/dir");
        let back = RunConfig::parse(&cfg.render()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.contrast, if proportions { ContrastForm::Plain } else { ContrastForm::Weighted });
    }

    #[test]
    fn trajectory_files_round_trip(
        states in prop::collection::vec((0.0f64..1e3, 0.0f64..1e3, 0.0f64..1e3), 2..60),
        theta in arb_theta(),
        lambda in 1.0f64..4.0,
        seed in prop::option::of(any::<u64>()),
        clamp_count in 0usize..5,
        eps in 0.0f64..1.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let n = states.len();
        let traj = Trajectory {
            model: ModelKind::Numbers,
            times: (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
            states: states.into_iter().map(|(x, y, z)| SirState::new(x, y, z)).collect(),
            meta: TrajectoryMeta { theta, params: SirParams::numbers_default().with_eps(eps), seed, lambda, clamp_count },
        };
        let path = dir.path().join("t.csv");
        save_trajectory(&path, &traj).unwrap();
        prop_assert_eq!(load_trajectory(&path).unwrap(), traj);
    }
}

#[test]
fn random_draws_differ_between_seeds() {
    let a: f64 = child_stream(1, &[0]).random();
    let b: f64 = child_stream(2, &[0]).random();
    assert_ne!(a, b);
}

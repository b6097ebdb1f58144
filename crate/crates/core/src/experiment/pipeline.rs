//! Dataset generation, batch estimation, prediction, theory runs and
//! reports. Every output is a pure function of the config and master seed.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::contrast::{ContrastConfig, ContrastForm};
use crate::error::{Error, Result};
use crate::estimator::lsgd_estimate;
use crate::levy::{sample_lambda, LevyPathNoise};
use crate::model::{ModelKind, SirState};
use crate::rng::{child_stream, derive_seed};
use crate::simulator::{deterministic_path, predict_ensemble, simulate_sde, EnsembleJumps, ObservationGrid};
use crate::stats::{iqr, median};
use crate::theory::{brownian_limit_covariance, information_matrix, rate_experiment, RateSettings};
use crate::transmission::{ThetaParams, PERIOD_MIN};

use super::config::{fmt_f64, RunConfig};
use super::io::{fmt_exact, load_trajectory, save_trajectory, write_states};

const DATASET: u64 = 0;
const SUBSAMPLE: u64 = 1;
const PREDICT: u64 = 2;
const THEORY: u64 = 3;

const THETA_TAG: u64 = 0;
const LAMBDA_TAG: u64 = 1;
const NOISE_TAG: u64 = 2;
const CELLS_TAG: u64 = 3;

/// Minimum median-error ratio between the largest and smallest noise level
/// for the consistency verdict.
pub const CONSISTENCY_RATIO: f64 = 5.0;

/// Draws true parameters: `period ~ U(0, 1)` (kept above the minimum period),
/// `alpha0 ~ U(0.1, 0.8)` and every harmonic coefficient
/// `~ U(0, alpha0 / (K sqrt 2))`, so `beta >= 0` everywhere.
pub fn draw_true_theta(order: usize, rng: &mut impl Rng) -> ThetaParams {
    let period = rng.random::<f64>().max(PERIOD_MIN);
    let alpha0 = rng.random_range(0.1..0.8);
    let cap = alpha0 / (order as f64 * 2f64.sqrt());
    let mut cos_coeffs = Vec::with_capacity(order);
    let mut sin_coeffs = Vec::with_capacity(order);
    for _ in 0..order {
        cos_coeffs.push(rng.random_range(0.0..cap));
        sin_coeffs.push(rng.random_range(0.0..cap));
    }
    ThetaParams::new(period, alpha0, cos_coeffs, sin_coeffs).expect("draws lie in the parameter domain")
}

/// Seeded draw of one dataset: true parameters, jump rate and driver seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPlan {
    pub id: usize,
    pub theta0: ThetaParams,
    pub lambda: f64,
    pub seed: u64,
}

impl DatasetPlan {
    pub fn draw(cfg: &RunConfig, id: usize) -> Self {
        let path = |tag| [DATASET, id as u64, tag];
        Self {
            id,
            theta0: draw_true_theta(cfg.estimator.order, &mut child_stream(cfg.seed, &path(THETA_TAG))),
            lambda: sample_lambda(&mut child_stream(cfg.seed, &path(LAMBDA_TAG))),
            seed: derive_seed(cfg.seed, &path(NOISE_TAG)),
        }
    }
}

/// Ids of the estimated subsample, ascending.
pub fn selected_ids(cfg: &RunConfig) -> Vec<usize> {
    let mut rng = child_stream(cfg.seed, &[SUBSAMPLE]);
    let mut ids = index::sample(&mut rng, cfg.datasets_generated, cfg.datasets_estimated).into_vec();
    ids.sort_unstable();
    ids
}

pub fn plan_datasets(cfg: &RunConfig) -> Vec<DatasetPlan> {
    selected_ids(cfg).into_iter().map(|id| DatasetPlan::draw(cfg, id)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: usize,
    pub eps: f64,
    pub model: ModelKind,
    pub theta0: ThetaParams,
    pub lambda: f64,
    pub seed: u64,
    /// Trajectory file relative to the output directory.
    pub file: PathBuf,
    pub clamp_count: usize,
    pub flagged: bool,
}

pub fn eps_label(eps: f64) -> String {
    format!("eps_{}", fmt_f64(eps))
}

pub fn dataset_file(eps: f64, id: usize) -> PathBuf {
    PathBuf::from("datasets").join(eps_label(eps)).join(format!("ds_{id:05}.csv"))
}

pub fn estimates_file(eps: f64) -> PathBuf {
    PathBuf::from("estimates").join(format!("{}.csv", eps_label(eps)))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let wrap = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let header = r.headers().map_err(wrap)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(wrap))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn parse_field<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse(format!("{}: bad field `{field}`", path.display())))
}

fn index_header(order: usize) -> Vec<String> {
    let mut h = vec!["eps".to_string(), "dataset_id".into()];
    h.extend(ThetaParams::names(order));
    h.extend(["lambda", "seed", "clamp_count", "flagged", "model", "file"].map(String::from));
    h
}

/// Simulates and persists the selected datasets at every noise level.
/// Failed simulations are logged and skipped.
pub fn generate_datasets(cfg: &RunConfig) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    let plans = plan_datasets(cfg);
    let grid = ObservationGrid::new(1.0, cfg.n_obs, cfg.substeps);
    let mut records = Vec::new();
    for &eps in &cfg.eps {
        let params = cfg.params.with_eps(eps);
        let batch: Vec<Option<DatasetRecord>> = plans
            .par_iter()
            .map(|plan| -> Result<Option<DatasetRecord>> {
                let noise = LevyPathNoise::sample(plan.seed, plan.lambda, 1.0, cfg.model.driver_dim())?;
                let traj = match simulate_sde(cfg.model, &plan.theta0, &params, cfg.s0, grid, &noise) {
                    Ok(t) => t,
                    Err(e @ Error::Simulation { .. }) => {
                        log::warn!("dataset {} at eps = {eps} skipped: {e}", plan.id);
                        return Ok(None);
                    }
                    Err(e) => return Err(e),
                };
                let file = dataset_file(eps, plan.id);
                save_trajectory(&cfg.out.join(&file), &traj)?;
                Ok(Some(DatasetRecord {
                    id: plan.id,
                    eps,
                    model: cfg.model,
                    theta0: plan.theta0.clone(),
                    lambda: plan.lambda,
                    seed: plan.seed,
                    file,
                    clamp_count: traj.meta.clamp_count,
                    flagged: traj.meta.flagged(),
                }))
            })
            .collect::<Result<_>>()?;
        records.extend(batch.into_iter().flatten());
    }
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![fmt_f64(r.eps), r.id.to_string()];
            row.extend(r.theta0.to_vec().into_iter().map(fmt_f64));
            row.extend([
                fmt_f64(r.lambda),
                r.seed.to_string(),
                r.clamp_count.to_string(),
                r.flagged.to_string(),
                r.model.to_string(),
                r.file.display().to_string(),
            ]);
            row
        })
        .collect();
    write_rows(&cfg.out.join("datasets/index.csv"), &index_header(cfg.estimator.order), &rows)?;
    log::info!("generated {} trajectories under {}", records.len(), cfg.out.display());
    Ok(records)
}

/// Reads `datasets/index.csv` under `out`.
pub fn load_index(out: &Path) -> Result<Vec<DatasetRecord>> {
    let path = out.join("datasets/index.csv");
    if !path.exists() {
        return Err(Error::MissingInputs(format!("{} (run `generate` first)", path.display())));
    }
    let (header, rows) = read_rows(&path)?;
    let n_theta = header.len() - 8;
    rows.iter()
        .map(|row| {
            let theta: Vec<f64> = row[2..2 + n_theta].iter().map(|f| parse_field(&path, f)).collect::<Result<_>>()?;
            let rest = &row[2 + n_theta..];
            Ok(DatasetRecord {
                eps: parse_field(&path, &row[0])?,
                id: parse_field(&path, &row[1])?,
                theta0: ThetaParams::from_slice(&theta)?,
                lambda: parse_field(&path, &rest[0])?,
                seed: parse_field(&path, &rest[1])?,
                clamp_count: parse_field(&path, &rest[2])?,
                flagged: parse_field(&path, &rest[3])?,
                model: rest[4].parse()?,
                file: PathBuf::from(&rest[5]),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub id: usize,
    pub eps: f64,
    pub theta0: ThetaParams,
    pub theta_hat: Option<ThetaParams>,
    pub psi: f64,
    pub converged: bool,
    pub error: Option<String>,
}

impl EstimateRow {
    pub fn errors(&self) -> Option<Vec<f64>> {
        let hat = self.theta_hat.as_ref()?;
        Some(hat.to_vec().iter().zip(self.theta0.to_vec()).map(|(a, b)| a - b).collect())
    }

    pub fn l2_error(&self) -> Option<f64> {
        self.errors().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

fn estimates_header(order: usize) -> Vec<String> {
    let mut h = vec!["dataset_id".to_string()];
    for name in ThetaParams::names(order) {
        h.push(name.clone());
        h.push(format!("{name}_hat"));
    }
    h.extend(["psi", "converged", "error"].map(String::from));
    h
}

fn estimate_one(cfg: &RunConfig, rec: &DatasetRecord) -> EstimateRow {
    let run = || -> Result<_> {
        let traj = load_trajectory(&cfg.out.join(&rec.file))?;
        let contrast = ContrastConfig { form: cfg.contrast, eps: rec.eps };
        let mut cells = child_stream(cfg.seed, &[DATASET, rec.id as u64, CELLS_TAG]);
        lsgd_estimate(&traj, &traj.meta.params, &contrast, &cfg.estimator, &cfg.bounds, &mut cells)
    };
    match run() {
        Ok(est) => EstimateRow {
            id: rec.id,
            eps: rec.eps,
            theta0: rec.theta0.clone(),
            theta_hat: Some(est.theta),
            psi: est.objective,
            converged: est.converged,
            error: None,
        },
        Err(e) => {
            log::warn!("estimation of dataset {} at eps = {} failed: {e}", rec.id, rec.eps);
            EstimateRow {
                id: rec.id,
                eps: rec.eps,
                theta0: rec.theta0.clone(),
                theta_hat: None,
                psi: f64::NAN,
                converged: false,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Estimates every record and writes one CSV per noise level, in the order
/// of `cfg.eps`. Failures are recorded in the `error` column.
pub fn batch_estimate(records: &[DatasetRecord], cfg: &RunConfig) -> Result<Vec<EstimateRow>> {
    cfg.validate()?;
    let mut all = Vec::with_capacity(records.len());
    for &eps in &cfg.eps {
        let batch: Vec<&DatasetRecord> = records.iter().filter(|r| r.eps == eps).collect();
        let rows: Vec<EstimateRow> = batch.par_iter().map(|rec| estimate_one(cfg, rec)).collect();
        let text: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut row = vec![r.id.to_string()];
                let hat = r.theta_hat.as_ref().map(|t| t.to_vec());
                for (j, v) in r.theta0.to_vec().into_iter().enumerate() {
                    row.push(fmt_exact(v));
                    row.push(hat.as_ref().map_or(String::new(), |h| fmt_exact(h[j])));
                }
                row.push(if r.psi.is_nan() { String::new() } else { fmt_exact(r.psi) });
                row.push(r.converged.to_string());
                row.push(r.error.clone().unwrap_or_default());
                row
            })
            .collect();
        write_rows(&cfg.out.join(estimates_file(eps)), &estimates_header(cfg.estimator.order), &text)?;
        all.extend(rows);
    }
    Ok(all)
}

/// Parses an estimates CSV written by [`batch_estimate`].
pub fn read_estimates(path: &Path, eps: f64) -> Result<Vec<EstimateRow>> {
    let (header, rows) = read_rows(path)?;
    let dim = (header.len() - 4) / 2;
    rows.iter()
        .map(|row| {
            let mut truth = Vec::with_capacity(dim);
            let mut hat = Vec::with_capacity(dim);
            for j in 0..dim {
                truth.push(parse_field::<f64>(path, &row[1 + 2 * j])?);
                let h = &row[2 + 2 * j];
                if !h.is_empty() {
                    hat.push(parse_field::<f64>(path, h)?);
                }
            }
            let psi = &row[1 + 2 * dim];
            let error = &row[3 + 2 * dim];
            Ok(EstimateRow {
                id: parse_field(path, &row[0])?,
                eps,
                theta0: ThetaParams::from_slice(&truth)?,
                theta_hat: if hat.len() == dim { Some(ThetaParams::from_slice(&hat)?) } else { None },
                psi: if psi.is_empty() { f64::NAN } else { parse_field(path, psi)? },
                converged: parse_field(path, &row[2 + 2 * dim])?,
                error: if error.is_empty() { None } else { Some(error.clone()) },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub eps: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Median absolute error per parameter.
    pub median_abs: Vec<f64>,
    /// Interquartile range of the signed error per parameter.
    pub iqr: Vec<f64>,
    pub median_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub rows: Vec<SummaryRow>,
    /// Medians non-increasing as eps decreases and shrinking by at least
    /// [`CONSISTENCY_RATIO`] across the range.
    pub consistent: bool,
    pub shrink_ratio: f64,
}

pub fn summarize(eps: f64, rows: &[EstimateRow]) -> SummaryRow {
    let errors: Vec<Vec<f64>> = rows.iter().filter_map(EstimateRow::errors).collect();
    let dim = rows.first().map_or(0, |r| r.theta0.dim());
    let col = |j: usize| errors.iter().map(|e| e[j]).collect::<Vec<_>>();
    SummaryRow {
        eps,
        n_ok: errors.len(),
        n_failed: rows.len() - errors.len(),
        median_abs: (0..dim).map(|j| median(&col(j).iter().map(|v| v.abs()).collect::<Vec<_>>())).collect(),
        iqr: (0..dim).map(|j| iqr(&col(j))).collect(),
        median_l2: median(&rows.iter().filter_map(EstimateRow::l2_error).collect::<Vec<_>>()),
    }
}

/// Consistency verdict over summary rows: `(verdict, shrink ratio)`.
pub fn consistency_verdict(rows: &[SummaryRow]) -> (bool, f64) {
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let monotone = sorted.windows(2).all(|w| w[1].median_l2 <= w[0].median_l2);
    let ratio = match (sorted.first(), sorted.last()) {
        (Some(a), Some(b)) => a.median_l2 / b.median_l2,
        _ => f64::NAN,
    };
    (monotone && ratio >= CONSISTENCY_RATIO, ratio)
}

/// Writes per-noise-level summaries, the consistency verdict and scatter data
/// under `out/report`.
pub fn emit_reports(out: &Path, cfg: &RunConfig) -> Result<ReportSummary> {
    let est_dir = out.join("estimates");
    let empty = std::fs::read_dir(&est_dir).map(|mut d| d.next().is_none()).unwrap_or(true);
    if empty {
        return Err(Error::MissingInputs(format!("no estimates found in {}", out.display())));
    }
    let files: Vec<(f64, PathBuf)> = cfg.eps.iter().map(|&e| (e, out.join(estimates_file(e)))).collect();
    let missing: Vec<String> = files.iter().filter(|(_, p)| !p.exists()).map(|(_, p)| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing.join(", ")));
    }

    let names = ThetaParams::names(cfg.estimator.order);
    let report = out.join("report");
    let mut rows = Vec::new();
    for (eps, path) in &files {
        let est = read_estimates(path, *eps)?;
        rows.push(summarize(*eps, &est));
        for (j, name) in names.iter().enumerate() {
            let pts: Vec<Vec<String>> = est
                .iter()
                .filter_map(|r| {
                    let hat = r.theta_hat.as_ref()?;
                    Some(vec![r.id.to_string(), fmt_exact(r.theta0.to_vec()[j]), fmt_exact(hat.to_vec()[j])])
                })
                .collect();
            let header = ["dataset_id", "true", "estimated"].map(String::from);
            write_rows(&report.join(format!("scatter_{name}_{}.csv", eps_label(*eps))), &header, &pts)?;
        }
    }

    let mut header = vec!["eps".to_string(), "n_ok".into(), "n_failed".into()];
    header.extend(names.iter().map(|n| format!("median_abs_{n}")));
    header.extend(names.iter().map(|n| format!("iqr_{n}")));
    header.push("median_l2".into());
    let text: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![fmt_f64(r.eps), r.n_ok.to_string(), r.n_failed.to_string()];
            row.extend(r.median_abs.iter().map(|v| fmt_exact(*v)));
            row.extend(r.iqr.iter().map(|v| fmt_exact(*v)));
            row.push(fmt_exact(r.median_l2));
            row
        })
        .collect();
    write_rows(&report.join("summary.csv"), &header, &text)?;

    let (consistent, shrink_ratio) = consistency_verdict(&rows);
    std::fs::write(
        report.join("consistency.txt"),
        format!(
            "verdict = {}\nshrink_ratio = {}\nrequired_ratio = {}\n",
            if consistent { "pass" } else { "fail" },
            fmt_f64(shrink_ratio),
            fmt_f64(CONSISTENCY_RATIO)
        ),
    )?;
    Ok(ReportSummary { rows, consistent, shrink_ratio })
}

/// Generates, estimates and reports in one go.
pub fn sweep(cfg: &RunConfig) -> Result<ReportSummary> {
    let records = generate_datasets(cfg)?;
    batch_estimate(&records, cfg)?;
    emit_reports(&cfg.out, cfg)
}

/// Fresh initial state for prediction runs: `(U(1,4), U(0.1,2), U(0.1,1))`
/// for counts, a uniform point of the simplex for proportions.
pub fn draw_prediction_state(model: ModelKind, rng: &mut impl Rng) -> SirState {
    match model {
        ModelKind::Numbers => SirState::new(rng.random_range(1.0..4.0), rng.random_range(0.1..2.0), rng.random_range(0.1..1.0)),
        ModelKind::Proportions => {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let (lo, hi) = (a.min(b), a.max(b));
            SirState::new(lo, hi - lo, 1.0 - hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub eps: f64,
    pub theta: ThetaParams,
    pub psi: f64,
    pub converged: bool,
    /// Sup-norm relative distance between the ensemble mean for the estimate
    /// and the deterministic path for the true parameters.
    pub sup_rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub theta0: ThetaParams,
    pub s0: SirState,
    pub rows: Vec<PredictionRow>,
}

/// Estimates the fixed parameters from fresh data at each prediction noise
/// level, then compares ensemble means for the estimates with the
/// deterministic path of the truth over the prediction horizon.
pub fn prediction_study(cfg: &RunConfig) -> Result<PredictionReport> {
    cfg.validate()?;
    let dir = cfg.out.join("predict");
    let theta0 = &cfg.theta0;
    let grid = ObservationGrid::new(1.0, cfg.n_obs, cfg.substeps);
    let horizon_obs = (cfg.predict_horizon * cfg.n_obs as f64).round() as usize;
    let pgrid = ObservationGrid::new(cfg.predict_horizon, horizon_obs, cfg.substeps);
    let s0 = draw_prediction_state(cfg.model, &mut child_stream(cfg.seed, &[PREDICT, u64::MAX]));

    let reference = deterministic_path(cfg.model, theta0, &cfg.params.with_eps(0.0), s0, pgrid)?;
    write_states(&dir.join("deterministic.csv"), &reference.times, &reference.states)?;

    let mut rows = Vec::new();
    for (i, &eps) in cfg.predict_eps.iter().enumerate() {
        let stream = |tag: u64| child_stream(cfg.seed, &[PREDICT, i as u64, tag]);
        let params = cfg.params.with_eps(eps);
        let lambda = sample_lambda(&mut stream(LAMBDA_TAG));
        let noise = LevyPathNoise::sample(derive_seed(cfg.seed, &[PREDICT, i as u64, NOISE_TAG]), lambda, 1.0, cfg.model.driver_dim())?;
        let data = simulate_sde(cfg.model, theta0, &params, cfg.s0, grid, &noise)?;
        let contrast = ContrastConfig { form: cfg.contrast, eps };
        let est = lsgd_estimate(&data, &params, &contrast, &cfg.estimator, &cfg.bounds, &mut stream(CELLS_TAG))?;
        let ens = predict_ensemble(
            cfg.model,
            &est.theta,
            &params,
            s0,
            pgrid,
            cfg.predict_paths,
            EnsembleJumps::Random,
            derive_seed(cfg.seed, &[PREDICT, i as u64, 4]),
            None,
        )?;
        write_states(&dir.join(format!("mean_{}.csv", eps_label(eps))), &ens.mean.times, &ens.mean.states)?;
        rows.push(PredictionRow {
            eps,
            theta: est.theta,
            psi: est.objective,
            converged: est.converged,
            sup_rel_diff: ens.mean.sup_relative_diff(&reference),
        });
    }

    let names = ThetaParams::names(theta0.order());
    let mut header = vec!["row".to_string(), "eps".into()];
    header.extend(names.iter().cloned());
    header.extend(["psi", "converged", "sup_rel_diff"].map(String::from));
    let mut text = vec![{
        let mut r = vec!["true".to_string(), String::new()];
        r.extend(theta0.to_vec().into_iter().map(fmt_exact));
        r.extend([String::new(), String::new(), String::new()]);
        r
    }];
    for row in &rows {
        let mut r = vec![eps_label(row.eps), fmt_f64(row.eps)];
        r.extend(row.theta.to_vec().into_iter().map(fmt_exact));
        r.extend([fmt_exact(row.psi), row.converged.to_string(), fmt_exact(row.sup_rel_diff)]);
        text.push(r);
    }
    write_rows(&dir.join("parameters.csv"), &header, &text)?;
    Ok(PredictionReport { theta0: theta0.clone(), s0, rows })
}

#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub min_eigenvalue: f64,
    pub asymmetry: f64,
    pub rate: crate::theory::RateReport,
}

/// Information matrix, limit covariance and the scaled-error experiment at
/// the configured `theta0`, written under `out/theory`.
pub fn run_theory(cfg: &RunConfig) -> Result<TheoryReport> {
    cfg.validate()?;
    let dir = cfg.out.join("theory");
    std::fs::create_dir_all(&dir)?;
    let names = ThetaParams::names(cfg.theta0.order());
    let weighted = cfg.contrast == ContrastForm::Weighted;
    let info = information_matrix(cfg.model, &cfg.theta0, &cfg.params, cfg.s0, weighted, cfg.n_quad)?;
    let matrix_rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<String>> {
        (0..m.nrows())
            .map(|i| {
                let mut r = vec![names[i].clone()];
                r.extend((0..m.ncols()).map(|j| fmt_exact(m[(i, j)])));
                r
            })
            .collect()
    };
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    write_rows(&dir.join("information.csv"), &header, &matrix_rows(&info.matrix))?;
    let eig: Vec<Vec<String>> = info.eigenvalues().into_iter().map(|v| vec![fmt_exact(v)]).collect();
    write_rows(&dir.join("eigenvalues.csv"), &["eigenvalue".to_string()], &eig)?;
    let cov = brownian_limit_covariance(cfg.model, &cfg.theta0, &cfg.params, cfg.s0, weighted, cfg.n_quad)?;
    write_rows(&dir.join("brownian_limit_covariance.csv"), &header, &matrix_rows(&cov))?;

    let settings = RateSettings {
        eps: cfg.rate_eps.clone(),
        replications: cfg.rate_replications,
        form: cfg.contrast,
        grid: ObservationGrid::new(1.0, cfg.rate_n_obs, cfg.substeps),
        estimator: cfg.estimator.clone(),
        bounds: cfg.bounds,
        limit_draws: cfg.limit_draws,
        n_quad: cfg.n_quad,
    };
    let rate = rate_experiment(cfg.model, &cfg.theta0, &cfg.params, cfg.s0, &settings, derive_seed(cfg.seed, &[THEORY]))?;

    let mut scaled_header = vec!["replication".to_string()];
    scaled_header.extend(names.iter().cloned());
    scaled_header.push("error".into());
    for row in &rate.rows {
        let text: Vec<Vec<String>> = row
            .scaled
            .iter()
            .enumerate()
            .map(|(r, v)| {
                let mut out = vec![r.to_string()];
                match v {
                    Some(v) => {
                        out.extend(v.iter().map(|x| fmt_exact(*x)));
                        out.push(String::new());
                    }
                    None => {
                        out.extend(names.iter().map(|_| String::new()));
                        let msg = row.failures.iter().find(|f| f.0 == r).map_or(String::new(), |f| f.1.clone());
                        out.push(msg);
                    }
                }
                out
            })
            .collect();
        write_rows(&dir.join(format!("scaled_{}.csv", eps_label(row.eps))), &scaled_header, &text)?;
    }
    let limit_rows: Vec<Vec<String>> = rate.limit.iter().map(|v| v.iter().map(|x| fmt_exact(*x)).collect()).collect();
    write_rows(&dir.join("limit_draws.csv"), &names, &limit_rows)?;

    let summary_header = ["eps", "parameter", "median", "iqr", "limit_iqr", "p_value"].map(String::from);
    let mut summary = Vec::new();
    for row in &rate.rows {
        for (j, name) in names.iter().enumerate() {
            summary.push(vec![
                fmt_f64(row.eps),
                name.clone(),
                fmt_exact(row.median[j]),
                fmt_exact(row.iqr[j]),
                fmt_exact(rate.limit_iqr[j]),
                row.p_values.as_ref().map_or(String::new(), |p| fmt_exact(p[j])),
            ]);
        }
    }
    write_rows(&dir.join("rate_summary.csv"), &summary_header, &summary)?;
    Ok(TheoryReport { min_eigenvalue: info.min_eigenvalue(), asymmetry: info.asymmetry(), rate })
}

//! Deterministic objects of the small-noise asymptotics and Monte-Carlo
//! checks of the consistency and rate results.
//!
//! Along the noiseless path `S0` the drift sensitivity is
//! `d b / d theta_j = d beta / d theta_j * X Y * e` with `e = (-1, 1, 0)`, so
//! every quadrature reduces to scalar weights times products of
//! `d beta / d theta`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::contrast::{ContrastConfig, ContrastForm};
use crate::error::{Error, Result};
use crate::estimator::{lsgd_estimate, BoxConstraints, EstimatorConfig};
use crate::levy::{sample_lambda, LevyPathNoise};
use crate::model::{ModelKind, SirParams, SirState, INFECTION_DIRECTION};
use crate::rng::{derive_seed, stream};
use crate::simulator::{simulate_sde, solve_ode, ObservationGrid, Trajectory};
use crate::stats::{iqr, median, welch_p_value};
use crate::transmission::{beta_eval, beta_grad_into, beta_unchecked, ThetaParams};

pub const DEFAULT_QUADRATURE_STEPS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    pub matrix: DMatrix<f64>,
    pub step: f64,
    pub theta: ThetaParams,
    pub weighted: bool,
}

impl InfoMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).abs().max()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        invert(&self.matrix, &self.theta)
    }
}

fn invert(m: &DMatrix<f64>, theta: &ThetaParams) -> Result<DMatrix<f64>> {
    let names = ThetaParams::names(theta.order());
    for j in 0..m.ncols() {
        if m.column(j).iter().all(|v| *v == 0.0) {
            return Err(Error::Singular { column: names[j].clone() });
        }
    }
    let scale = m.abs().max();
    let eig = SymmetricEigen::new(m.clone());
    let (imin, lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty matrix");
    if lmin.abs() <= 1e-12 * scale {
        let v = eig.eigenvectors.column(imin);
        let j = v.iamax();
        return Err(Error::Singular { column: names[j].clone() });
    }
    m.clone().try_inverse().ok_or_else(|| Error::Singular { column: names[0].clone() })
}

/// Scalar weights `e' W e` and `e' W Σ W e` at state `s`, where `W` is the
/// contrast weight and `Σ = σσ'`.
fn weights(model: ModelKind, s: &SirState, p: &SirParams, weighted: bool) -> Result<(f64, f64, f64)> {
    let w = state_weight(model, s, p, weighted)?;
    let e = nalgebra::Vector3::from(INFECTION_DIRECTION);
    let sigma = model.diffusion_matrix(s, p);
    let info = w * e.dot(&e);
    let noise = w * w * (e.transpose() * sigma * e)[(0, 0)];
    Ok((w, info, noise))
}

/// Diagonal contrast weight at `s`: 1 for the plain form, `(σ X Y Z)^-2` for
/// the weighted one.
fn state_weight(model: ModelKind, s: &SirState, p: &SirParams, weighted: bool) -> Result<f64> {
    if !weighted {
        return Ok(1.0);
    }
    if !model.has_invertible_diffusion() {
        return Err(Error::Config(format!("the weighted form needs an invertible diffusion; {model} has none")));
    }
    let c = p.sigma * s.product();
    if c == 0.0 {
        return Err(Error::Singular { column: "diffusion".into() });
    }
    Ok(1.0 / (c * c))
}

/// Composite Simpson weight of node `k` out of `0..=n`, `n` even.
fn quadrature_weight(k: usize, n: usize, h: f64) -> f64 {
    if k == 0 || k == n {
        h / 3.0
    } else if k % 2 == 1 {
        4.0 * h / 3.0
    } else {
        2.0 * h / 3.0
    }
}

/// Gram matrix `∫ ω(t) ∇β ∇β' (X Y)^2 dt` with `ω` picked from the weights.
fn gram(
    model: ModelKind,
    theta: &ThetaParams,
    p: &SirParams,
    path: &Trajectory,
    weighted: bool,
    pick: impl Fn((f64, f64, f64)) -> f64,
) -> Result<DMatrix<f64>> {
    let dim = theta.dim();
    let n = path.intervals();
    let h = path.times[1] - path.times[0];
    let mut out = DMatrix::zeros(dim, dim);
    let mut grad = vec![0.0; dim];
    for (k, (t, s)) in path.times.iter().zip(&path.states).enumerate() {
        let omega = pick(weights(model, s, p, weighted)?);
        beta_grad_into(*t, theta, &mut grad);
        let c = quadrature_weight(k, n, h) * omega * s.contact().powi(2);
        for i in 0..dim {
            for j in 0..=i {
                out[(i, j)] += c * grad[i] * grad[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            out[(j, i)] = out[(i, j)];
        }
    }
    Ok(out)
}

fn check_quadrature(n_quad: usize) -> Result<()> {
    if n_quad < 2 || n_quad % 2 == 1 {
        return Err(Error::Domain(format!("quadrature needs an even number of steps, got {n_quad}")));
    }
    Ok(())
}

/// Information matrix along `S0` for the plain (`weighted = false`) or
/// inverse-diffusion weighted contrast, by Simpson quadrature on the RK4
/// grid with `n_quad` steps over `[0, 1]`.
pub fn information_matrix(
    model: ModelKind,
    theta: &ThetaParams,
    p: &SirParams,
    s0: SirState,
    weighted: bool,
    n_quad: usize,
) -> Result<InfoMatrix> {
    check_quadrature(n_quad)?;
    let path = solve_ode(model, theta, p, s0, 1.0, n_quad)?;
    let matrix = gram(model, theta, p, &path, weighted, |w| w.1)?;
    Ok(InfoMatrix { matrix, step: 1.0 / n_quad as f64, theta: theta.clone(), weighted })
}

/// `J = ∫ (∂b)' W σσ' W (∂b) dt`, the covariance of the Brownian part of the
/// limit before multiplication by the inverse information.
pub fn noise_gram(
    model: ModelKind,
    theta: &ThetaParams,
    p: &SirParams,
    s0: SirState,
    weighted: bool,
    n_quad: usize,
) -> Result<DMatrix<f64>> {
    check_quadrature(n_quad)?;
    let path = solve_ode(model, theta, p, s0, 1.0, n_quad)?;
    gram(model, theta, p, &path, weighted, |w| w.2)
}

/// Covariance `I^-1 J I^-1` of the Brownian part of the limit variable.
pub fn brownian_limit_covariance(
    model: ModelKind,
    theta: &ThetaParams,
    p: &SirParams,
    s0: SirState,
    weighted: bool,
    n_quad: usize,
) -> Result<DMatrix<f64>> {
    let inv = information_matrix(model, theta, p, s0, weighted, n_quad)?.inverse()?;
    let j = noise_gram(model, theta, p, s0, weighted, n_quad)?;
    Ok(&inv * j * &inv)
}

/// `F(θ) = ∫ |b(t, S0_t, θ) - b(t, S0_t, θ0)|^2 dt` along the path of `θ0`.
pub fn asymptotic_contrast(
    model: ModelKind,
    theta: &ThetaParams,
    theta0: &ThetaParams,
    p: &SirParams,
    s0: SirState,
    n_quad: usize,
) -> Result<f64> {
    check_quadrature(n_quad)?;
    beta_eval(0.0, theta)?;
    let path = solve_ode(model, theta0, p, s0, 1.0, n_quad)?;
    let h = 1.0 / n_quad as f64;
    let e2: f64 = INFECTION_DIRECTION.iter().map(|v| v * v).sum();
    let total = path
        .times
        .iter()
        .zip(&path.states)
        .enumerate()
        .map(|(k, (t, s))| {
            let db = (beta_unchecked(*t, theta) - beta_unchecked(*t, theta0)) * s.contact();
            quadrature_weight(k, n_quad, h) * db * db * e2
        })
        .sum();
    Ok(total)
}

/// Which parts of the driver feed a limit draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitOptions {
    pub brownian: bool,
    pub jumps: bool,
    /// Jump rate; `None` draws it uniformly from `{1, 2, 3, 4}` per sample.
    pub rate: Option<f64>,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self { brownian: true, jumps: true, rate: None }
    }
}

/// Draws of `I^-1 ∫ (∂b)' W (σ dB + G dN)` along the noiseless path.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    model: ModelKind,
    theta: ThetaParams,
    params: SirParams,
    path: Trajectory,
    weighted: bool,
    inverse: DMatrix<f64>,
}

const LIMIT_RATE_STREAM: u64 = 0;
const LIMIT_NOISE_STREAM: u64 = 1;

impl LimitSampler {
    pub fn new(
        model: ModelKind,
        theta0: &ThetaParams,
        p: &SirParams,
        s0: SirState,
        weighted: bool,
        n_quad: usize,
    ) -> Result<Self> {
        let info = information_matrix(model, theta0, p, s0, weighted, n_quad)?;
        let inverse = info.inverse()?;
        let path = solve_ode(model, theta0, p, s0, 1.0, n_quad)?;
        Ok(Self { model, theta: theta0.clone(), params: *p, path, weighted, inverse })
    }

    pub fn inverse_information(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    fn state_at(&self, t: f64) -> SirState {
        let n = self.path.intervals();
        let h = 1.0 / n as f64;
        let k = ((t / h).floor() as usize).min(n - 1);
        let w = (t - self.path.times[k]) / h;
        let (a, b) = (self.path.states[k].to_array(), self.path.states[k + 1].to_array());
        SirState::from_array([0, 1, 2].map(|i| a[i] + w * (b[i] - a[i])))
    }

    /// Adds `∇β(t) X Y e' W (noise coefficient · increment)` to `acc`.
    fn accumulate(&self, t: f64, s: &SirState, increment: &[f64], grad: &mut [f64], acc: &mut [f64]) -> Result<()> {
        let w = state_weight(self.model, s, &self.params, self.weighted)?;
        let u = self.model.apply_noise(s, &self.params, increment);
        let proj: f64 = INFECTION_DIRECTION.iter().zip(&u).map(|(e, v)| e * v).sum();
        beta_grad_into(t, &self.theta, grad);
        let c = w * s.contact() * proj;
        for (a, g) in acc.iter_mut().zip(grad.iter()) {
            *a += c * g;
        }
        Ok(())
    }

    /// One draw, a pure function of `seed` and `opts`.
    pub fn sample(&self, seed: u64, opts: &LimitOptions) -> Result<Vec<f64>> {
        let dim = self.theta.dim();
        let mut acc = vec![0.0; dim];
        let mut grad = vec![0.0; dim];
        let rate = match opts.rate {
            Some(r) => r,
            None => sample_lambda(&mut stream(derive_seed(seed, &[LIMIT_RATE_STREAM]))),
        };
        let rate = if opts.jumps { rate } else { 0.0 };
        let mut noise = LevyPathNoise::sample(derive_seed(seed, &[LIMIT_NOISE_STREAM]), rate, 1.0, self.model.driver_dim())?;
        if opts.brownian {
            let h = 1.0 / self.path.intervals() as f64;
            let mut db = vec![0.0; self.model.driver_dim()];
            for k in 0..self.path.intervals() {
                noise.fill_brownian(h, &mut db);
                self.accumulate(self.path.times[k], &self.path.states[k], &db, &mut grad, &mut acc)?;
            }
        }
        for i in 0..noise.jump_count() {
            let t = noise.jump_times()[i];
            let s = self.state_at(t);
            self.accumulate(t, &s, noise.mark(i), &mut grad, &mut acc)?;
        }
        Ok((&self.inverse * DVector::from_vec(acc)).iter().copied().collect())
    }
}

/// One-shot draw of the limit variable.
pub fn sample_limit_rv(
    model: ModelKind,
    theta0: &ThetaParams,
    p: &SirParams,
    s0: SirState,
    seed: u64,
    opts: &LimitOptions,
) -> Result<Vec<f64>> {
    LimitSampler::new(model, theta0, p, s0, false, DEFAULT_QUADRATURE_STEPS)?.sample(seed, opts)
}

#[derive(Debug, Clone)]
pub struct RateSettings {
    pub eps: Vec<f64>,
    pub replications: usize,
    pub form: ContrastForm,
    pub grid: ObservationGrid,
    pub estimator: EstimatorConfig,
    pub bounds: BoxConstraints,
    /// Limit draws to compare against; 0 skips the comparison.
    pub limit_draws: usize,
    pub n_quad: usize,
}

#[derive(Debug, Clone)]
pub struct RateRow {
    pub eps: f64,
    /// `ε^-1 (θ̂ - θ0)` per replication; `None` where estimation failed.
    pub scaled: Vec<Option<Vec<f64>>>,
    pub failures: Vec<(usize, String)>,
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    /// Two-sided location-test p-value against the limit draws, per component.
    pub p_values: Option<Vec<f64>>,
}

impl RateRow {
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.scaled.iter().flatten().map(|v| v[j]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub theta0: ThetaParams,
    pub rows: Vec<RateRow>,
    pub limit: Vec<Vec<f64>>,
    pub limit_iqr: Vec<f64>,
}

const REP_RATE_STREAM: u64 = 0;
const REP_NOISE_STREAM: u64 = 1;
const REP_CELL_STREAM: u64 = 2;
const LIMIT_STREAM: u64 = 3;

fn column(samples: &[Vec<f64>], j: usize) -> Vec<f64> {
    samples.iter().map(|v| v[j]).collect()
}

/// Scaled estimation errors across noise levels.
///
/// Replication `r` uses the same jump rate, driver and period cells at every
/// `ε`, so rows differ only through the noise level.
pub fn rate_experiment(
    model: ModelKind,
    theta0: &ThetaParams,
    p: &SirParams,
    s0: SirState,
    settings: &RateSettings,
    seed: u64,
) -> Result<RateReport> {
    if settings.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Domain("scaled errors need every ε > 0".into()));
    }
    let dim = theta0.dim();
    let mut rows = Vec::with_capacity(settings.eps.len());
    for &eps in &settings.eps {
        let params = p.with_eps(eps);
        let contrast = ContrastConfig { form: settings.form, eps };
        let results: Vec<Result<Vec<f64>>> = (0..settings.replications)
            .into_par_iter()
            .map(|r| {
                let rep = r as u64;
                let rate = sample_lambda(&mut stream(derive_seed(seed, &[rep, REP_RATE_STREAM])));
                let noise =
                    LevyPathNoise::sample(derive_seed(seed, &[rep, REP_NOISE_STREAM]), rate, settings.grid.horizon, model.driver_dim())?;
                let traj = simulate_sde(model, theta0, &params, s0, settings.grid, &noise)?;
                let mut cells = stream(derive_seed(seed, &[rep, REP_CELL_STREAM]));
                let est = lsgd_estimate(&traj, &params, &contrast, &settings.estimator, &settings.bounds, &mut cells)?;
                Ok(est.theta.to_vec().iter().zip(theta0.to_vec()).map(|(a, b)| (a - b) / eps).collect())
            })
            .collect();
        let mut scaled = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok(v) => scaled.push(Some(v)),
                Err(e) => {
                    log::warn!("replication {r} at eps = {eps} failed: {e}");
                    failures.push((r, e.to_string()));
                    scaled.push(None);
                }
            }
        }
        let ok: Vec<Vec<f64>> = scaled.iter().flatten().cloned().collect();
        rows.push(RateRow {
            eps,
            median: (0..dim).map(|j| median(&column(&ok, j))).collect(),
            iqr: (0..dim).map(|j| iqr(&column(&ok, j))).collect(),
            scaled,
            failures,
            p_values: None,
        });
    }

    let mut limit = Vec::new();
    let mut limit_iqr = vec![f64::NAN; dim];
    if settings.limit_draws > 0 {
        let weighted = settings.form == ContrastForm::Weighted;
        let sampler = LimitSampler::new(model, theta0, p, s0, weighted, settings.n_quad)?;
        let opts = LimitOptions::default();
        limit = (0..settings.limit_draws)
            .into_par_iter()
            .map(|i| sampler.sample(derive_seed(seed, &[LIMIT_STREAM, i as u64]), &opts))
            .collect::<Result<_>>()?;
        limit_iqr = (0..dim).map(|j| iqr(&column(&limit, j))).collect();
        for row in &mut rows {
            row.p_values = Some((0..dim).map(|j| welch_p_value(&row.component(j), &column(&limit, j))).collect());
        }
    }
    Ok(RateReport { theta0: theta0.clone(), rows, limit, limit_iqr })
}

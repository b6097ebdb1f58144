//! Jump-adapted Euler–Maruyama integration, RK4 for the deterministic limit,
//! and prediction ensembles.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy::LevyPathNoise;
use crate::model::{drift_with_rate, ModelKind, SirParams, SirState};
use crate::rng::derive_seed;
use crate::transmission::{beta_eval, beta_unchecked, ThetaParams};

/// Trajectories with more clamps than this are flagged in their metadata.
pub const CLAMP_FLAG_THRESHOLD: usize = 5;

/// Failed ensemble paths are re-drawn at most this many times.
pub const MAX_PATH_RETRIES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub theta: ThetaParams,
    pub params: SirParams,
    pub seed: Option<u64>,
    pub lambda: f64,
    pub clamp_count: usize,
}

impl TrajectoryMeta {
    pub fn flagged(&self) -> bool {
        self.clamp_count > CLAMP_FLAG_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: ModelKind,
    pub times: Vec<f64>,
    pub states: Vec<SirState>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of observation intervals.
    pub fn intervals(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    /// Largest componentwise distance to `other`, relative to the largest
    /// component magnitude of `other`.
    pub fn sup_relative_diff(&self, other: &Trajectory) -> f64 {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (a, b) in self.states.iter().zip(&other.states) {
            for (u, v) in a.to_array().iter().zip(b.to_array()) {
                diff = diff.max((u - v).abs());
                scale = scale.max(v.abs());
            }
        }
        diff / scale
    }
}

/// Observation layout of a simulated path: `n_obs` equal intervals on
/// `[0, horizon]`, each split into `substeps` integration steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationGrid {
    pub horizon: f64,
    pub n_obs: usize,
    pub substeps: usize,
}

impl Default for ObservationGrid {
    fn default() -> Self {
        Self { horizon: 1.0, n_obs: 100, substeps: 1 }
    }
}

impl ObservationGrid {
    pub fn new(horizon: f64, n_obs: usize, substeps: usize) -> Self {
        Self { horizon, n_obs, substeps }
    }

    pub fn obs_time(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.n_obs as f64
    }

    fn validate(&self) -> Result<()> {
        if self.n_obs == 0 || self.substeps == 0 || !(self.horizon > 0.0) {
            return Err(Error::Domain(format!("invalid observation grid {self:?}")));
        }
        Ok(())
    }
}

struct Stepper<'a> {
    model: ModelKind,
    theta: &'a ThetaParams,
    params: &'a SirParams,
    clamps: usize,
    increment: Vec<f64>,
}

impl Stepper<'_> {
    fn finish(&mut self, mut s: SirState, t: f64) -> Result<SirState> {
        if !s.is_finite() {
            return Err(Error::Simulation { time: t, reason: format!("non-finite state {s:?}") });
        }
        if self.model.clamp(&mut s) {
            self.clamps += 1;
        }
        Ok(s)
    }

    fn euler(&mut self, s: SirState, t0: f64, t1: f64, noise: &mut LevyPathNoise) -> Result<SirState> {
        let dt = t1 - t0;
        let drift = drift_with_rate(self.model, beta_unchecked(t0, self.theta), &s, self.params);
        let mut next = s.to_array();
        let eps = self.params.eps;
        if eps != 0.0 {
            noise.fill_brownian(dt, &mut self.increment);
            let diffusion = self.model.apply_noise(&s, self.params, &self.increment);
            for i in 0..3 {
                next[i] += drift[i] * dt + eps * diffusion[i];
            }
        } else {
            for i in 0..3 {
                next[i] += drift[i] * dt;
            }
        }
        self.finish(SirState::from_array(next), t1)
    }

    fn jump(&mut self, s: SirState, t: f64, mark: &[f64]) -> Result<SirState> {
        let kick = self.model.apply_noise(&s, self.params, mark);
        let mut next = s.to_array();
        for i in 0..3 {
            next[i] += self.params.eps * kick[i];
        }
        self.finish(SirState::from_array(next), t)
    }
}

/// Integrates the SDE on the union of the regular step grid and the jump
/// times of `noise`, returning the states at the observation times.
///
/// Between nodes the Euler–Maruyama step uses the drift at the left node and
/// `eps` times the diffusion applied to a Brownian increment. At a jump time
/// the state moves by `eps` times the jump coefficient (evaluated at the
/// pre-jump state) applied to the mark.
pub fn simulate_sde(
    model: ModelKind,
    theta: &ThetaParams,
    params: &SirParams,
    s0: SirState,
    grid: ObservationGrid,
    noise: &LevyPathNoise,
) -> Result<Trajectory> {
    grid.validate()?;
    params.validate(model)?;
    beta_eval(0.0, theta)?;
    if noise.dim() != model.driver_dim() {
        return Err(Error::Domain(format!(
            "{model} model needs a {}-dimensional driver, got {}",
            model.driver_dim(),
            noise.dim()
        )));
    }
    let mut noise = noise.clone();
    let mut stepper = Stepper {
        model,
        theta,
        params,
        clamps: 0,
        increment: vec![0.0; noise.dim()],
    };
    let n_steps = grid.n_obs * grid.substeps;
    // without noise the jumps have no effect and do not refine the grid
    let jump_times = if params.eps == 0.0 { Vec::new() } else { noise.jump_times().to_vec() };
    let mut next_jump = 0;

    let mut times = Vec::with_capacity(grid.n_obs + 1);
    let mut states = Vec::with_capacity(grid.n_obs + 1);
    let mut s = s0;
    let mut t = 0.0;
    times.push(0.0);
    states.push(s);

    for step in 1..=n_steps {
        let t_next = step as f64 * grid.horizon / n_steps as f64;
        while next_jump < jump_times.len() && jump_times[next_jump] <= t_next {
            let tj = jump_times[next_jump];
            if tj > t {
                s = stepper.euler(s, t, tj, &mut noise)?;
                t = tj;
            }
            let mark = noise.mark(next_jump).to_vec();
            s = stepper.jump(s, tj, &mark)?;
            next_jump += 1;
        }
        if t_next > t {
            s = stepper.euler(s, t, t_next, &mut noise)?;
        }
        t = t_next;
        if step % grid.substeps == 0 {
            times.push(grid.obs_time(step / grid.substeps));
            states.push(s);
        }
    }

    Ok(Trajectory {
        model,
        times,
        states,
        meta: TrajectoryMeta {
            theta: theta.clone(),
            params: *params,
            seed: Some(noise.seed()),
            lambda: noise.rate(),
            clamp_count: stepper.clamps,
        },
    })
}

/// Classical fourth-order Runge–Kutta solution of the drift-only system on
/// `n_steps` uniform steps over `[0, horizon]`. All nodes are returned.
pub fn solve_ode(
    model: ModelKind,
    theta: &ThetaParams,
    params: &SirParams,
    s0: SirState,
    horizon: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    if n_steps == 0 || !(horizon > 0.0) {
        return Err(Error::Domain("solve_ode needs n_steps >= 1 and horizon > 0".into()));
    }
    beta_eval(0.0, theta)?;
    let f = |t: f64, y: [f64; 3]| drift_with_rate(model, beta_unchecked(t, theta), &SirState::from_array(y), params);
    let axpy = |y: [f64; 3], a: f64, k: [f64; 3]| [y[0] + a * k[0], y[1] + a * k[1], y[2] + a * k[2]];

    let h = horizon / n_steps as f64;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut y = s0.to_array();
    times.push(0.0);
    states.push(s0);
    for step in 0..n_steps {
        let t = step as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, axpy(y, 0.5 * h, k1));
        let k3 = f(t + 0.5 * h, axpy(y, 0.5 * h, k2));
        let k4 = f(t + h, axpy(y, h, k3));
        for i in 0..3 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = (step + 1) as f64 * h;
        let s = SirState::from_array(y);
        if !s.is_finite() {
            return Err(Error::Simulation { time: t_next, reason: "non-finite ODE state".into() });
        }
        times.push(t_next);
        states.push(s);
    }
    Ok(Trajectory {
        model,
        times,
        states,
        meta: TrajectoryMeta {
            theta: theta.clone(),
            params: *params,
            seed: None,
            lambda: 0.0,
            clamp_count: 0,
        },
    })
}

/// How the jump rate of each ensemble path is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnsembleJumps {
    /// A fresh uniform draw from `{1, 2, 3, 4}` per path.
    Random,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub mean: Trajectory,
    pub n_paths: usize,
    /// Paths that had to be re-drawn after a simulation failure.
    pub retries: usize,
    /// Deterministic path for the reference parameters, when requested.
    pub reference: Option<Trajectory>,
}

fn ensemble_path(
    model: ModelKind,
    theta: &ThetaParams,
    params: &SirParams,
    s0: SirState,
    grid: ObservationGrid,
    jumps: EnsembleJumps,
    seed: u64,
    path: usize,
) -> Result<(Trajectory, usize)> {
    let mut last_err = None;
    for attempt in 0..=MAX_PATH_RETRIES {
        let path_seed = derive_seed(seed, &[path as u64, attempt as u64]);
        let rate = match jumps {
            EnsembleJumps::Random => crate::levy::sample_lambda(&mut crate::rng::stream(path_seed)),
            EnsembleJumps::Fixed(rate) => rate,
        };
        let noise = LevyPathNoise::sample(path_seed, rate, grid.horizon, model.driver_dim())?;
        match simulate_sde(model, theta, params, s0, grid, &noise) {
            Ok(traj) => return Ok((traj, attempt)),
            Err(e @ Error::Simulation { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Pointwise mean of `n_paths` independent SDE paths.
///
/// Paths run in parallel with seeds derived from `(seed, path index)` and are
/// averaged in index order, so the result does not depend on scheduling.
pub fn predict_ensemble(
    model: ModelKind,
    theta: &ThetaParams,
    params: &SirParams,
    s0: SirState,
    grid: ObservationGrid,
    n_paths: usize,
    jumps: EnsembleJumps,
    seed: u64,
    reference: Option<&ThetaParams>,
) -> Result<Ensemble> {
    if n_paths == 0 {
        return Err(Error::Domain("ensemble needs at least one path".into()));
    }
    let paths: Vec<(Trajectory, usize)> = (0..n_paths)
        .into_par_iter()
        .map(|i| ensemble_path(model, theta, params, s0, grid, jumps, seed, i))
        .collect::<Result<_>>()?;

    let mut mean = paths[0].0.clone();
    mean.meta.seed = Some(seed);
    mean.meta.clamp_count = paths.iter().map(|(p, _)| p.meta.clamp_count).sum();
    let mut acc: Vec<[f64; 3]> = mean.states.iter().map(|s| s.to_array()).collect();
    // running mean keeps identical paths bit-identical
    for (k, (path, _)) in paths.iter().enumerate().skip(1) {
        let w = 1.0 / (k + 1) as f64;
        for (a, s) in acc.iter_mut().zip(&path.states) {
            let s = s.to_array();
            for i in 0..3 {
                a[i] += (s[i] - a[i]) * w;
            }
        }
    }
    mean.states = acc.into_iter().map(SirState::from_array).collect();

    let reference = match reference {
        Some(theta_ref) => Some(deterministic_path(model, theta_ref, params, s0, grid)?),
        None => None,
    };
    Ok(Ensemble {
        mean,
        n_paths,
        retries: paths.iter().map(|(_, r)| r).sum(),
        reference,
    })
}

/// RK4 solution on the integration grid of `grid`, reported at its
/// observation times.
pub fn deterministic_path(
    model: ModelKind,
    theta: &ThetaParams,
    params: &SirParams,
    s0: SirState,
    grid: ObservationGrid,
) -> Result<Trajectory> {
    grid.validate()?;
    let full = solve_ode(model, theta, params, s0, grid.horizon, grid.n_obs * grid.substeps)?;
    let mut out = full.clone();
    out.times = (0..=grid.n_obs).map(|k| grid.obs_time(k)).collect();
    out.states = full.states.iter().step_by(grid.substeps).copied().collect();
    Ok(out)
}

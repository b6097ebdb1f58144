//! Least-squares contrast built from one-step Euler residuals.
//!
//! For observations `S_0, ..., S_n` on a regular grid with spacing `h`, the
//! residuals are `P_k = S_k - S_{k-1} - h b(t_{k-1}, S_{k-1}, theta)` and the
//! contrast is `n eps^-2 sum_k P_k' W_{k-1} P_k`, where `W = I` for the plain
//! form and `W = [sigma sigma']^-1` for the weighted form. With `eps = 0` the
//! `eps^-2` factor is dropped; it never moves the minimiser.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ModelKind, SirParams, INFECTION_DIRECTION};
use crate::simulator::Trajectory;
use crate::transmission::{beta_eval, beta_grad_into, beta_unchecked, fourier_basis, ThetaParams, PERIOD_MIN};

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastForm {
    Plain,
    Weighted,
}

impl fmt::Display for ContrastForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContrastForm::Plain => "plain",
            ContrastForm::Weighted => "weighted",
        })
    }
}

impl FromStr for ContrastForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plain" => Ok(ContrastForm::Plain),
            "weighted" => Ok(ContrastForm::Weighted),
            other => Err(Error::Parse(format!("unknown contrast form `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastConfig {
    pub form: ContrastForm,
    /// Noise amplitude used for the `eps^-2` factor.
    pub eps: f64,
}

impl ContrastConfig {
    pub fn plain(eps: f64) -> Self {
        Self { form: ContrastForm::Plain, eps }
    }

    pub fn weighted(eps: f64) -> Self {
        Self { form: ContrastForm::Weighted, eps }
    }

    /// Default form for a model: weighted for counts, plain for proportions.
    pub fn for_model(model: ModelKind, eps: f64) -> Self {
        match model {
            ModelKind::Numbers => Self::weighted(eps),
            ModelKind::Proportions => Self::plain(eps),
        }
    }

    /// `n eps^-2`, or `n` when `eps = 0`.
    pub fn scale(&self, n: usize) -> f64 {
        if self.eps > 0.0 {
            n as f64 / (self.eps * self.eps)
        } else {
            n as f64
        }
    }

    pub fn validate(&self, model: ModelKind) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("contrast eps = {} must be >= 0", self.eps)));
        }
        if self.form == ContrastForm::Weighted && !model.has_invertible_diffusion() {
            return Err(Error::Config(format!(
                "weighted contrast needs an invertible noise matrix; the {model} model only supports the plain form"
            )));
        }
        Ok(())
    }
}

/// Contrast value with the degeneracy indicator of the weighted form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastValue {
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastGradient {
    pub gradient: Vec<f64>,
    pub degenerate: bool,
}

/// Checks that `traj` sits on `t_k = k h` and returns `h`.
pub fn grid_spacing(traj: &Trajectory) -> Result<f64> {
    let n = traj.intervals();
    if n == 0 || traj.states.len() != traj.times.len() {
        return Err(Error::Domain("trajectory needs at least two observations".into()));
    }
    let h = traj.times[n] / n as f64;
    if !(h > 0.0) {
        return Err(Error::Domain("observation times must increase".into()));
    }
    for (k, t) in traj.times.iter().enumerate() {
        if (t - k as f64 * h).abs() > GRID_TOL * h.max(1.0) {
            return Err(Error::Domain(format!("irregular observation grid at index {k} (t = {t})")));
        }
    }
    Ok(h)
}

/// Residuals `P_k`, k = 1..n, with the drift chosen by the trajectory's model.
pub fn residuals(traj: &Trajectory, theta: &ThetaParams, params: &SirParams) -> Result<Vec<[f64; 3]>> {
    let h = grid_spacing(traj)?;
    (1..traj.len())
        .map(|k| {
            let prev = &traj.states[k - 1];
            let cur = traj.states[k].to_array();
            let b = traj.model.drift(traj.times[k - 1], prev, theta, params)?;
            let prev = prev.to_array();
            Ok([0, 1, 2].map(|i| cur[i] - prev[i] - h * b[i]))
        })
        .collect()
}

/// Plain contrast `n eps^-2 sum |P_k|^2`.
pub fn contrast_plain(traj: &Trajectory, theta: &ThetaParams, params: &SirParams, cfg: &ContrastConfig) -> Result<f64> {
    let res = residuals(traj, theta, params)?;
    let sum: f64 = res.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>()).sum();
    Ok(cfg.scale(res.len()) * sum)
}

/// Weighted contrast with `Lambda_{k-1} = (sigma X Y Z)^2 I`. If any
/// `Lambda_{k-1}` is singular the value is 0 and `degenerate` is set.
pub fn contrast_weighted(
    traj: &Trajectory,
    theta: &ThetaParams,
    params: &SirParams,
    cfg: &ContrastConfig,
) -> Result<ContrastValue> {
    ContrastConfig::weighted(cfg.eps).validate(traj.model)?;
    let res = residuals(traj, theta, params)?;
    let weights = inverse_noise_weights(traj, params);
    if weights.is_none() {
        return Ok(ContrastValue { value: 0.0, degenerate: true });
    }
    let weights = weights.unwrap();
    let sum: f64 = res
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * p.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(ContrastValue { value: cfg.scale(res.len()) * sum, degenerate: false })
}

/// Dispatches on `cfg.form`.
pub fn contrast(traj: &Trajectory, theta: &ThetaParams, params: &SirParams, cfg: &ContrastConfig) -> Result<ContrastValue> {
    match cfg.form {
        ContrastForm::Plain => Ok(ContrastValue { value: contrast_plain(traj, theta, params, cfg)?, degenerate: false }),
        ContrastForm::Weighted => contrast_weighted(traj, theta, params, cfg),
    }
}

/// Analytic gradient of the contrast in the full parameter vector.
pub fn contrast_gradient(
    traj: &Trajectory,
    theta: &ThetaParams,
    params: &SirParams,
    cfg: &ContrastConfig,
) -> Result<ContrastGradient> {
    let problem = ContrastProblem::new(traj, params, cfg)?;
    beta_eval(0.0, theta)?;
    if problem.degenerate {
        return Ok(ContrastGradient { gradient: vec![0.0; theta.dim()], degenerate: true });
    }
    let (_, gradient) = problem.value_and_gradient(theta);
    Ok(ContrastGradient { gradient, degenerate: false })
}

/// `1 / (sigma X Y Z)^2` at nodes 0..n-1, or `None` when any vanishes.
fn inverse_noise_weights(traj: &Trajectory, params: &SirParams) -> Option<Vec<f64>> {
    let n = traj.intervals();
    let mut out = Vec::with_capacity(n);
    for s in &traj.states[..n] {
        let c = params.sigma * s.product();
        let det_root = c * c;
        if !(det_root > 0.0) || !det_root.is_finite() {
            return None;
        }
        out.push(1.0 / det_root);
    }
    Some(out)
}

#[derive(Debug, Clone)]
struct Node {
    t: f64,
    contact: f64,
    /// `S_k - S_{k-1} - h b_fixed(S_{k-1})`
    base: [f64; 3],
    weight: f64,
}

/// Precomputed contrast for one trajectory.
///
/// Uses `b = b_fixed + beta X Y e` so that each evaluation only recomputes the
/// transmission rate at the left nodes.
#[derive(Debug, Clone)]
pub struct ContrastProblem {
    model: ModelKind,
    h: f64,
    scale: f64,
    nodes: Vec<Node>,
    degenerate: bool,
}

impl ContrastProblem {
    pub fn new(traj: &Trajectory, params: &SirParams, cfg: &ContrastConfig) -> Result<Self> {
        cfg.validate(traj.model)?;
        let h = grid_spacing(traj)?;
        let n = traj.intervals();
        let weights = match cfg.form {
            ContrastForm::Plain => Some(vec![1.0; n]),
            ContrastForm::Weighted => inverse_noise_weights(traj, params),
        };
        let degenerate = weights.is_none();
        let weights = weights.unwrap_or_else(|| vec![0.0; n]);
        let nodes = (1..=n)
            .map(|k| {
                let prev = &traj.states[k - 1];
                let fixed = traj.model.drift_fixed(prev, params);
                let cur = traj.states[k].to_array();
                let prev_a = prev.to_array();
                Node {
                    t: traj.times[k - 1],
                    contact: prev.contact(),
                    base: [0, 1, 2].map(|i| cur[i] - prev_a[i] - h * fixed[i]),
                    weight: weights[k - 1],
                }
            })
            .collect();
        Ok(Self { model: traj.model, h, scale: cfg.scale(n), nodes, degenerate })
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len()
    }

    fn residual(&self, node: &Node, beta: f64) -> [f64; 3] {
        let c = self.h * beta * node.contact;
        [0, 1, 2].map(|i| node.base[i] - c * INFECTION_DIRECTION[i])
    }

    /// Contrast value. The period must be at least [`PERIOD_MIN`].
    pub fn value(&self, theta: &ThetaParams) -> f64 {
        debug_assert!(theta.period >= PERIOD_MIN);
        if self.degenerate {
            return 0.0;
        }
        let sum: f64 = self
            .nodes
            .iter()
            .map(|node| {
                let p = self.residual(node, beta_unchecked(node.t, theta));
                node.weight * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
            })
            .sum();
        self.scale * sum
    }

    pub fn value_and_gradient(&self, theta: &ThetaParams) -> (f64, Vec<f64>) {
        let dim = theta.dim();
        let mut grad = vec![0.0; dim];
        if self.degenerate {
            return (0.0, grad);
        }
        let mut dbeta = vec![0.0; dim];
        let mut sum = 0.0;
        for node in &self.nodes {
            let p = self.residual(node, beta_unchecked(node.t, theta));
            sum += node.weight * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
            let along = INFECTION_DIRECTION[0] * p[0] + INFECTION_DIRECTION[1] * p[1] + INFECTION_DIRECTION[2] * p[2];
            let coeff = -2.0 * self.scale * node.weight * self.h * node.contact * along;
            beta_grad_into(node.t, theta, &mut dbeta);
            for (g, d) in grad.iter_mut().zip(&dbeta) {
                *g += coeff * d;
            }
        }
        (self.scale * sum, grad)
    }

    /// Restriction to the `alpha` coefficients at a fixed period.
    pub fn at_period(&self, period: f64, order: usize) -> FixedPeriodProblem<'_> {
        let width = 2 * order + 1;
        let mut basis = vec![0.0; self.nodes.len() * width];
        for (node, row) in self.nodes.iter().zip(basis.chunks_exact_mut(width)) {
            fourier_basis(node.t, period, row);
        }
        FixedPeriodProblem { problem: self, period, width, basis }
    }
}

/// Contrast as a function of `[alpha0, alpha1_1, alpha2_1, ...]` at a fixed
/// period. It is a convex quadratic in these coefficients.
#[derive(Debug, Clone)]
pub struct FixedPeriodProblem<'a> {
    problem: &'a ContrastProblem,
    period: f64,
    width: usize,
    basis: Vec<f64>,
}

impl FixedPeriodProblem<'_> {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn value_and_gradient(&self, alphas: &[f64]) -> (f64, Vec<f64>) {
        let pb = self.problem;
        let mut grad = vec![0.0; self.width];
        if pb.degenerate {
            return (0.0, grad);
        }
        let mut sum = 0.0;
        for (node, phi) in pb.nodes.iter().zip(self.basis.chunks_exact(self.width)) {
            let beta: f64 = phi.iter().zip(alphas).map(|(a, b)| a * b).sum();
            let p = pb.residual(node, beta);
            sum += node.weight * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
            let along = INFECTION_DIRECTION[0] * p[0] + INFECTION_DIRECTION[1] * p[1] + INFECTION_DIRECTION[2] * p[2];
            let coeff = -2.0 * pb.scale * node.weight * pb.h * node.contact * along;
            for (g, f) in grad.iter_mut().zip(phi) {
                *g += coeff * f;
            }
        }
        (pb.scale * sum, grad)
    }

    pub fn value(&self, alphas: &[f64]) -> f64 {
        self.value_and_gradient(alphas).0
    }
}

/// Stacked least-squares system `A alpha ~ y` whose squared residual norm is
/// the contrast at fixed `period`: three rows per observation interval.
pub fn alpha_design(
    traj: &Trajectory,
    period: f64,
    order: usize,
    params: &SirParams,
    cfg: &ContrastConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !(period >= PERIOD_MIN) || order == 0 {
        return Err(Error::Domain(format!("invalid period {period} or order {order}")));
    }
    let problem = ContrastProblem::new(traj, params, cfg)?;
    if problem.degenerate {
        return Err(Error::Estimation("weighted contrast is degenerate on this trajectory".into()));
    }
    let width = 2 * order + 1;
    let n = problem.nodes.len();
    let mut design = DMatrix::zeros(3 * n, width);
    let mut target = DVector::zeros(3 * n);
    let mut phi = vec![0.0; width];
    for (k, node) in problem.nodes.iter().enumerate() {
        let root_w = (problem.scale * node.weight).sqrt();
        fourier_basis(node.t, period, &mut phi);
        for i in 0..3 {
            let row = 3 * k + i;
            target[row] = root_w * node.base[i];
            let lead = root_w * problem.h * node.contact * INFECTION_DIRECTION[i];
            for j in 0..width {
                design[(row, j)] = lead * phi[j];
            }
        }
    }
    Ok((design, target))
}

/// Unconstrained minimiser of the contrast over the `alpha` coefficients at a
/// fixed period, by least squares on [`alpha_design`].
pub fn linear_solve_alpha(
    traj: &Trajectory,
    period: f64,
    order: usize,
    params: &SirParams,
    cfg: &ContrastConfig,
) -> Result<Vec<f64>> {
    let (design, target) = alpha_design(traj, period, order, params, cfg)?;
    let names = ThetaParams::names(order);
    let alpha_names = &names[1..];
    for (j, col) in design.column_iter().enumerate() {
        if col.iter().all(|v| *v == 0.0) {
            return Err(Error::Singular { column: alpha_names[j].clone() });
        }
    }
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let (j_min, s_min) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, s)| if s < acc.1 { (j, s) } else { acc });
    if s_min <= 1e-10 * s_max {
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let null_dir = v_t.row(j_min);
        let worst = null_dir
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, _)| j)
            .unwrap_or(0);
        return Err(Error::Singular { column: alpha_names[worst].clone() });
    }
    let solution = svd
        .solve(&target, 0.0)
        .map_err(|e| Error::Estimation(format!("least-squares solve failed: {e}")))?;
    Ok(solution.iter().copied().collect())
}

//! Linear-search gradient descent over the transmission parameters.
//!
//! For each of `M` period cells `((i-1)/M, i/M)` a test period is drawn
//! uniformly inside the cell and the contrast, which is convex in the `alpha`
//! coefficients at fixed period, is minimised by projected gradient descent
//! over the box. The cell with the smallest contrast wins; optionally a
//! final projected-gradient pass over all parameters (period included)
//! refines it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::contrast::{linear_solve_alpha, ContrastConfig, ContrastProblem};
use crate::error::{Error, Result};
use crate::model::SirParams;
use crate::simulator::Trajectory;
use crate::transmission::{ThetaParams, PERIOD_MIN};

/// Longest run of step halvings tried before a line search gives up.
const MAX_BACKTRACKS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxConstraints {
    pub period: (f64, f64),
    pub alpha0: (f64, f64),
    /// Bounds shared by every `alpha1_k` and `alpha2_k`.
    pub harmonic: (f64, f64),
}

impl Default for BoxConstraints {
    fn default() -> Self {
        Self { period: (PERIOD_MIN, 1.0), alpha0: (1e-6, 2.0), harmonic: (0.0, 2.0) }
    }
}

impl BoxConstraints {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo <= hi && lo.is_finite() && hi.is_finite();
        if !ordered(self.period) || !ordered(self.alpha0) || !ordered(self.harmonic) {
            return Err(Error::Config(format!("box bounds must satisfy lower <= upper: {self:?}")));
        }
        if self.period.0 < PERIOD_MIN {
            return Err(Error::Config(format!("period lower bound must be >= {PERIOD_MIN}")));
        }
        Ok(())
    }

    pub fn lower(&self, order: usize) -> Vec<f64> {
        let mut v = vec![self.period.0];
        v.extend(self.alpha_lower(order));
        v
    }

    pub fn upper(&self, order: usize) -> Vec<f64> {
        let mut v = vec![self.period.1];
        v.extend(self.alpha_upper(order));
        v
    }

    pub fn alpha_lower(&self, order: usize) -> Vec<f64> {
        let mut v = vec![self.alpha0.0];
        v.extend(std::iter::repeat_n(self.harmonic.0, 2 * order));
        v
    }

    pub fn alpha_upper(&self, order: usize) -> Vec<f64> {
        let mut v = vec![self.alpha0.1];
        v.extend(std::iter::repeat_n(self.harmonic.1, 2 * order));
        v
    }

    pub fn contains(&self, theta: &ThetaParams) -> bool {
        let x = theta.to_vec();
        let (lo, hi) = (self.lower(theta.order()), self.upper(theta.order()));
        x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| v >= l && v <= h)
    }
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Euclidean projection of a raw parameter vector onto the box.
pub fn project_box(raw: &[f64], bx: &BoxConstraints) -> Result<ThetaParams> {
    let mut theta = ThetaParams::from_slice(raw)?;
    let order = theta.order();
    let mut x = theta.to_vec();
    clamp_into(&mut x, &bx.lower(order), &bx.upper(order));
    theta = ThetaParams::from_slice(&x)?;
    Ok(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolver {
    /// Projected gradient descent with backtracking.
    Pgd,
    /// Direct least squares, projected onto the box afterwards.
    Linear,
}

impl fmt::Display for InnerSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InnerSolver::Pgd => "pgd",
            InnerSolver::Linear => "linear",
        })
    }
}

impl FromStr for InnerSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pgd" => Ok(InnerSolver::Pgd),
            "linear" => Ok(InnerSolver::Linear),
            other => Err(Error::Parse(format!("unknown inner solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Number of period cells `M`.
    pub cells: usize,
    /// Fourier order `K`.
    pub order: usize,
    /// Initial trial step of the line search.
    pub learning_rate: f64,
    /// Step shrink factor on a failed sufficient-decrease test.
    pub backtrack: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    pub max_iter: usize,
    /// Stop once the projected gradient norm falls below this fraction of its
    /// starting value.
    pub grad_tol: f64,
    pub inner: InnerSolver,
    /// Starting `[alpha0, alpha1_1, alpha2_1, ...]` in every cell.
    pub initial_alpha: Vec<f64>,
    /// Run a full-parameter pass from the best cell.
    pub refine: bool,
    /// Interval subdivided into the period cells.
    pub period_range: (f64, f64),
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            cells: 20,
            order: 1,
            learning_rate: 1e-2,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            max_iter: 10_000,
            grad_tol: 1e-10,
            inner: InnerSolver::Pgd,
            initial_alpha: vec![0.51, 0.31, 0.21],
            refine: true,
            period_range: (0.0, 1.0),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || self.order == 0 || self.max_iter == 0 {
            return Err(Error::Config("cells, order and max_iter must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_tol > 0.0) {
            return Err(Error::Config("learning rate and tolerance must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::Config("backtrack and sufficient_decrease must lie in (0, 1)".into()));
        }
        if self.initial_alpha.len() != 2 * self.order + 1 {
            return Err(Error::Config(format!(
                "initial alpha has {} entries, order {} needs {}",
                self.initial_alpha.len(),
                self.order,
                2 * self.order + 1
            )));
        }
        let (lo, hi) = self.period_range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!("period range {:?} must satisfy 0 <= lo < hi <= 1", self.period_range)));
        }
        Ok(())
    }
}

/// Outcome of one projected-gradient run.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdRun {
    pub x: Vec<f64>,
    pub value: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient with components that push against an active bound removed.
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| {
            let blocked = (*xi <= *l && *gi > 0.0) || (*xi >= *h && *gi < 0.0);
            if blocked { 0.0 } else { gi * gi }
        })
        .sum::<f64>()
        .sqrt()
}

/// Projected gradient descent `x <- P(x - eta grad f(x))` with Armijo
/// backtracking. After the first step the trial step length is the
/// Barzilai–Borwein estimate `s's / s'y`, halved until sufficient decrease,
/// so accepted objective values never increase.
pub fn projected_descent<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &EstimatorConfig) -> PgdRun
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x);
    let mut trace = vec![fx];
    let pg0 = projected_gradient_norm(&x, &g, lo, hi);
    let tol = cfg.grad_tol * pg0;
    let mut eta = cfg.learning_rate;
    let mut iterations = 0;
    let mut converged = pg0 == 0.0;

    while !converged && iterations < cfg.max_iter {
        if projected_gradient_norm(&x, &g, lo, hi) <= tol {
            converged = true;
            break;
        }
        let mut step = eta;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            clamp_into(&mut cand, lo, hi);
            let d: Vec<f64> = cand.iter().zip(&x).map(|(c, xi)| c - xi).collect();
            if d.iter().all(|v| *v == 0.0) {
                break;
            }
            let (fc, gc) = f(&cand);
            if fc <= fx + cfg.sufficient_decrease * dot(&g, &d) {
                accepted = Some((cand, fc, gc, d));
                break;
            }
            step *= cfg.backtrack;
        }
        let Some((cand, fc, gc, s)) = accepted else {
            // no representable descent step: numerically stationary
            converged = true;
            break;
        };
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        eta = if sy > 0.0 { dot(&s, &s) / sy } else { step / cfg.backtrack };
        x = cand;
        fx = fc;
        g = gc;
        iterations += 1;
        trace.push(fx);
    }
    if !converged {
        converged = projected_gradient_norm(&x, &g, lo, hi) <= tol;
    }
    PgdRun { x, value: fx, iterations, converged, trace }
}

/// Result of minimising over the `alpha` coefficients in one period cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub index: usize,
    pub period: f64,
    pub alphas: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises the contrast over the `alpha` coefficients at a fixed period by
/// projected gradient descent over the box.
pub fn pgd_alpha(
    traj: &Trajectory,
    period: f64,
    params: &SirParams,
    contrast: &ContrastConfig,
    cfg: &EstimatorConfig,
    bx: &BoxConstraints,
) -> Result<PgdRun> {
    cfg.validate()?;
    bx.validate()?;
    let problem = ContrastProblem::new(traj, params, contrast)?;
    pgd_alpha_on(&problem, period, cfg, bx)
}

fn pgd_alpha_on(problem: &ContrastProblem, period: f64, cfg: &EstimatorConfig, bx: &BoxConstraints) -> Result<PgdRun> {
    if !(period >= PERIOD_MIN) {
        return Err(Error::Domain(format!("period {period} below {PERIOD_MIN}")));
    }
    let fixed = problem.at_period(period, cfg.order);
    Ok(projected_descent(
        |a| fixed.value_and_gradient(a),
        &cfg.initial_alpha,
        &bx.alpha_lower(cfg.order),
        &bx.alpha_upper(cfg.order),
        cfg,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta: ThetaParams,
    /// Contrast at `theta`: the minimum over the cell table and refinement.
    pub objective: f64,
    pub cells: Vec<CellResult>,
    pub best_cell: usize,
    /// Full-parameter pass from the best cell, when enabled.
    pub refinement: Option<PgdRun>,
    /// Best cell's inner solve converged, and so did the refinement if run.
    pub converged: bool,
}

/// Draws the test period of every cell.
pub fn draw_cell_periods(cfg: &EstimatorConfig, bx: &BoxConstraints, rng: &mut impl Rng) -> Vec<f64> {
    let (lo, hi) = cfg.period_range;
    let width = (hi - lo) / cfg.cells as f64;
    (0..cfg.cells)
        .map(|i| {
            let u: f64 = rng.random();
            let p = lo + (i as f64 + u) * width;
            p.clamp(bx.period.0, bx.period.1)
        })
        .collect()
}

/// Linear-search gradient descent estimate of the transmission parameters.
pub fn lsgd_estimate(
    traj: &Trajectory,
    params: &SirParams,
    contrast: &ContrastConfig,
    cfg: &EstimatorConfig,
    bx: &BoxConstraints,
    rng: &mut impl Rng,
) -> Result<EstimationResult> {
    cfg.validate()?;
    bx.validate()?;
    let problem = ContrastProblem::new(traj, params, contrast)?;
    if problem.is_degenerate() {
        return Err(Error::Estimation(
            "weighted contrast is degenerate in every cell (a state has a zero component)".into(),
        ));
    }
    let periods = draw_cell_periods(cfg, bx, rng);
    let (alpha_lo, alpha_hi) = (bx.alpha_lower(cfg.order), bx.alpha_upper(cfg.order));

    let mut cells = Vec::with_capacity(periods.len());
    for (index, &period) in periods.iter().enumerate() {
        let cell = match cfg.inner {
            InnerSolver::Pgd => {
                let run = pgd_alpha_on(&problem, period, cfg, bx)?;
                CellResult { index, period, alphas: run.x, value: run.value, iterations: run.iterations, converged: run.converged }
            }
            InnerSolver::Linear => match linear_solve_alpha(traj, period, cfg.order, params, contrast) {
                Ok(mut alphas) => {
                    clamp_into(&mut alphas, &alpha_lo, &alpha_hi);
                    let value = problem.at_period(period, cfg.order).value(&alphas);
                    CellResult { index, period, alphas, value, iterations: 0, converged: true }
                }
                Err(Error::Singular { .. }) => CellResult {
                    index,
                    period,
                    alphas: cfg.initial_alpha.clone(),
                    value: f64::INFINITY,
                    iterations: 0,
                    converged: false,
                },
                Err(e) => return Err(e),
            },
        };
        cells.push(cell);
    }

    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.value < cells[best].value {
            best = i;
        }
    }
    if !cells[best].value.is_finite() {
        return Err(Error::Estimation("no period cell produced a finite contrast".into()));
    }
    let best_cell = &cells[best];
    let mut theta = ThetaParams::from_period_and_alphas(best_cell.period, &best_cell.alphas)?;
    let mut objective = best_cell.value;
    let mut converged = best_cell.converged;

    let refinement = if cfg.refine {
        let run = projected_descent(
            |x| {
                let th = ThetaParams::from_slice(x).expect("shape fixed by the box");
                problem.value_and_gradient(&th)
            },
            &theta.to_vec(),
            &bx.lower(cfg.order),
            &bx.upper(cfg.order),
            cfg,
        );
        if run.value <= objective {
            objective = run.value;
            theta = ThetaParams::from_slice(&run.x)?;
        }
        converged &= run.converged;
        Some(run)
    } else {
        None
    };

    Ok(EstimationResult { theta, objective, cells, best_cell: best, refinement, converged })
}

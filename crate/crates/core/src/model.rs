//! Drift, diffusion and jump coefficients of the two stochastic SIR models.
//!
//! * [`ModelKind::Numbers`]: population counts with births and deaths, driven
//!   by a 3-dimensional Lévy process through the diagonal noise matrix
//!   `sigma X Y Z * I`.
//! * [`ModelKind::Proportions`]: population fractions on the simplex, driven by
//!   a scalar Lévy process through the column `sigma X Y Z * (-1, 2, -1)`.
//!
//! Both models share the structure `b(t, s, theta) = b_fixed(s) + beta(t, theta) X Y e`
//! with `e = (-1, 1, 0)`; the contrast and theory modules rely on it.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::transmission::{beta_eval, ThetaParams};

/// Direction in state space along which transmission acts.
pub const INFECTION_DIRECTION: [f64; 3] = [-1.0, 1.0, 0.0];

const PROPORTION_NOISE: [f64; 3] = [-1.0, 2.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Numbers,
    Proportions,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Numbers => "numbers",
            ModelKind::Proportions => "proportions",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "numbers" => Ok(ModelKind::Numbers),
            "proportions" => Ok(ModelKind::Proportions),
            other => Err(Error::Parse(format!("unknown model `{other}`"))),
        }
    }
}

/// Fixed model constants. `birth` and `mortality` are the demographic rates
/// (zero for the proportional model); `eps` scales the whole noise term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirParams {
    pub birth: f64,
    pub mortality: f64,
    pub recovery: f64,
    pub sigma: f64,
    pub eps: f64,
}

impl SirParams {
    /// Constants of the population-numbers study.
    pub fn numbers_default() -> Self {
        Self { birth: 0.018, mortality: 0.00042, recovery: 0.07142, sigma: 0.5, eps: 0.0 }
    }

    /// Constants of the population-proportions study.
    pub fn proportions_default() -> Self {
        Self { birth: 0.0, mortality: 0.0, recovery: 0.07142, sigma: 0.5, eps: 0.0 }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self, model: ModelKind) -> Result<()> {
        if !(self.recovery > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Domain("recovery and sigma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::Domain(format!("eps = {} outside [0, 1)", self.eps)));
        }
        if self.birth < 0.0 || self.mortality < 0.0 {
            return Err(Error::Domain("birth and mortality must be non-negative".into()));
        }
        if model == ModelKind::Proportions && (self.birth != 0.0 || self.mortality != 0.0) {
            return Err(Error::Domain("the proportional model requires birth = mortality = 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SirState {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { x: a[0], y: a[1], z: a[2] }
    }

    pub fn total(&self) -> f64 {
        self.x + self.y + self.z
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// `X * Y`, the bilinear infection term.
    pub fn contact(&self) -> f64 {
        self.x * self.y
    }

    pub fn product(&self) -> f64 {
        self.x * self.y * self.z
    }
}

/// `(Λ − μX − βXY, βXY − (μ+γ)Y, γY − μZ)`.
pub fn drift_numbers(t: f64, s: &SirState, theta: &ThetaParams, p: &SirParams) -> Result<[f64; 3]> {
    let beta = beta_eval(t, theta)?;
    Ok(drift_with_rate(ModelKind::Numbers, beta, s, p))
}

/// `(−βXY, βXY − γY, γY)`.
pub fn drift_proportions(t: f64, s: &SirState, theta: &ThetaParams, p: &SirParams) -> Result<[f64; 3]> {
    let beta = beta_eval(t, theta)?;
    Ok(drift_with_rate(ModelKind::Proportions, beta, s, p))
}

/// `σXYZ`; the numbers model's noise matrix is this scalar times the identity.
pub fn noise_coeff_numbers(s: &SirState, p: &SirParams) -> f64 {
    p.sigma * s.product()
}

/// `σXYZ · (−1, 2, −1)`.
pub fn noise_coeff_proportions(s: &SirState, p: &SirParams) -> [f64; 3] {
    let c = p.sigma * s.product();
    PROPORTION_NOISE.map(|v| v * c)
}

/// Drift for a known transmission rate value.
pub(crate) fn drift_with_rate(model: ModelKind, beta: f64, s: &SirState, p: &SirParams) -> [f64; 3] {
    let infection = beta * s.contact();
    match model {
        ModelKind::Numbers => [
            p.birth - p.mortality * s.x - infection,
            infection - (p.mortality + p.recovery) * s.y,
            p.recovery * s.y - p.mortality * s.z,
        ],
        ModelKind::Proportions => [-infection, infection - p.recovery * s.y, p.recovery * s.y],
    }
}

impl ModelKind {
    /// Dimension of the driving Lévy process.
    pub fn driver_dim(self) -> usize {
        match self {
            ModelKind::Numbers => 3,
            ModelKind::Proportions => 1,
        }
    }

    pub fn drift(self, t: f64, s: &SirState, theta: &ThetaParams, p: &SirParams) -> Result<[f64; 3]> {
        match self {
            ModelKind::Numbers => drift_numbers(t, s, theta, p),
            ModelKind::Proportions => drift_proportions(t, s, theta, p),
        }
    }

    /// Part of the drift that does not depend on the transmission parameters.
    pub fn drift_fixed(self, s: &SirState, p: &SirParams) -> [f64; 3] {
        drift_with_rate(self, 0.0, s, p)
    }

    /// Applies the noise coefficient to a driver increment (Brownian or jump
    /// mark) of length [`driver_dim`](Self::driver_dim).
    pub fn apply_noise(self, s: &SirState, p: &SirParams, increment: &[f64]) -> [f64; 3] {
        match self {
            ModelKind::Numbers => {
                let c = noise_coeff_numbers(s, p);
                [c * increment[0], c * increment[1], c * increment[2]]
            }
            ModelKind::Proportions => noise_coeff_proportions(s, p).map(|v| v * increment[0]),
        }
    }

    /// Diffusion matrix `σσᵀ` at state `s`.
    pub fn diffusion_matrix(self, s: &SirState, p: &SirParams) -> Matrix3<f64> {
        match self {
            ModelKind::Numbers => {
                let c = noise_coeff_numbers(s, p);
                Matrix3::identity() * (c * c)
            }
            ModelKind::Proportions => {
                let v = nalgebra::Vector3::from(noise_coeff_proportions(s, p));
                v * v.transpose()
            }
        }
    }

    /// Whether `σσᵀ` can be inverted away from degenerate states.
    pub fn has_invertible_diffusion(self) -> bool {
        matches!(self, ModelKind::Numbers)
    }

    /// Clamps negative components to zero. For the proportional model the
    /// clamped state is renormalised onto the simplex. Returns `true` when a
    /// clamp happened.
    pub fn clamp(self, s: &mut SirState) -> bool {
        if s.x >= 0.0 && s.y >= 0.0 && s.z >= 0.0 {
            return false;
        }
        s.x = s.x.max(0.0);
        s.y = s.y.max(0.0);
        s.z = s.z.max(0.0);
        if self == ModelKind::Proportions {
            let total = s.total();
            if total > 0.0 {
                s.x /= total;
                s.y /= total;
                s.z /= total;
            }
        }
        true
    }
}

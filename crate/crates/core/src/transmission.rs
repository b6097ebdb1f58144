//! Fourier-periodic transmission rate and its parameter gradient.
//!
//! The transmission rate is a truncated Fourier series of order `K` with
//! period `period`:
//!
//! ```text
//! beta(t) = alpha0 + sum_k alpha1_k cos(2 pi k t / period) + alpha2_k sin(2 pi k t / period)
//! ```
//!
//! Parameter vectors are laid out as
//! `[period, alpha0, alpha1_1, alpha2_1, ..., alpha1_K, alpha2_K]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Smallest admissible period. The rate is singular as the period goes to 0.
pub const PERIOD_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    pub period: f64,
    pub alpha0: f64,
    /// Cosine coefficients `alpha1_k`, k = 1..K.
    pub cos_coeffs: Vec<f64>,
    /// Sine coefficients `alpha2_k`, k = 1..K.
    pub sin_coeffs: Vec<f64>,
}

impl ThetaParams {
    /// Builds and validates a parameter set of arbitrary Fourier order.
    pub fn new(period: f64, alpha0: f64, cos_coeffs: Vec<f64>, sin_coeffs: Vec<f64>) -> Result<Self> {
        let theta = Self { period, alpha0, cos_coeffs, sin_coeffs };
        theta.validate()?;
        Ok(theta)
    }

    /// First-order (`K = 1`) parameter set.
    pub fn first_order(period: f64, alpha0: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        Self::new(period, alpha0, vec![alpha1], vec![alpha2])
    }

    /// Builds from a raw parameter vector without checking sign constraints.
    ///
    /// Only the shape is checked. Use this for unconstrained iterates and
    /// finite-difference probes; evaluation still rejects periods below
    /// [`PERIOD_MIN`].
    pub fn from_slice(raw: &[f64]) -> Result<Self> {
        if raw.len() < 4 || raw.len() % 2 != 0 {
            return Err(Error::Domain(format!(
                "parameter vector must have length 2K+2 with K >= 1, got {}",
                raw.len()
            )));
        }
        let order = (raw.len() - 2) / 2;
        let mut cos_coeffs = Vec::with_capacity(order);
        let mut sin_coeffs = Vec::with_capacity(order);
        for pair in raw[2..].chunks_exact(2) {
            cos_coeffs.push(pair[0]);
            sin_coeffs.push(pair[1]);
        }
        Ok(Self { period: raw[0], alpha0: raw[1], cos_coeffs, sin_coeffs })
    }

    /// Replaces the period and all `alpha` coefficients.
    /// `alphas` is laid out as `[alpha0, alpha1_1, alpha2_1, ...]`.
    pub fn from_period_and_alphas(period: f64, alphas: &[f64]) -> Result<Self> {
        let mut raw = Vec::with_capacity(alphas.len() + 1);
        raw.push(period);
        raw.extend_from_slice(alphas);
        Self::from_slice(&raw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cos_coeffs.is_empty() || self.cos_coeffs.len() != self.sin_coeffs.len() {
            return Err(Error::Domain("Fourier order must be >= 1 with matching cos/sin lengths".into()));
        }
        if !(self.period >= PERIOD_MIN && self.period <= 1.0) {
            return Err(Error::Domain(format!(
                "period {} outside [{PERIOD_MIN}, 1]",
                self.period
            )));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::Domain(format!("alpha0 = {} must be positive", self.alpha0)));
        }
        let harmonics_ok = self
            .cos_coeffs
            .iter()
            .chain(&self.sin_coeffs)
            .all(|a| *a >= 0.0 && a.is_finite());
        if !harmonics_ok {
            return Err(Error::Domain("harmonic coefficients must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Fourier order `K`.
    pub fn order(&self) -> usize {
        self.cos_coeffs.len()
    }

    /// Length of the parameter vector, `2K + 2`.
    pub fn dim(&self) -> usize {
        2 * self.order() + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(self.period);
        out.extend(self.alphas());
        out
    }

    /// `[alpha0, alpha1_1, alpha2_1, ...]`.
    pub fn alphas(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim() - 1);
        out.push(self.alpha0);
        for (c, s) in self.cos_coeffs.iter().zip(&self.sin_coeffs) {
            out.push(*c);
            out.push(*s);
        }
        out
    }

    /// Parameter names in vector order, used for CSV headers.
    pub fn names(order: usize) -> Vec<String> {
        let mut names = vec!["period".to_string(), "alpha0".to_string()];
        for k in 1..=order {
            if order == 1 {
                names.push("alpha1".into());
                names.push("alpha2".into());
            } else {
                names.push(format!("alpha1_{k}"));
                names.push(format!("alpha2_{k}"));
            }
        }
        names
    }

    /// Oscillation amplitude bound `sum_k sqrt(alpha1_k^2 + alpha2_k^2)`.
    pub fn harmonic_amplitude(&self) -> f64 {
        self.cos_coeffs
            .iter()
            .zip(&self.sin_coeffs)
            .map(|(c, s)| c.hypot(*s))
            .sum()
    }
}

fn check_period(period: f64) -> Result<()> {
    if period >= PERIOD_MIN && period.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "period {period} below the singularity guard {PERIOD_MIN}"
        )))
    }
}

/// Fills `out` with the Fourier basis `[1, cos(w t), sin(w t), cos(2 w t), ...]`
/// with `w = 2 pi / period`. `out.len()` must be `2K + 1`.
pub fn fourier_basis(t: f64, period: f64, out: &mut [f64]) {
    debug_assert!(out.len() % 2 == 1);
    out[0] = 1.0;
    let base = 2.0 * PI * t / period;
    for (k, pair) in out[1..].chunks_exact_mut(2).enumerate() {
        let (s, c) = (base * (k + 1) as f64).sin_cos();
        pair[0] = c;
        pair[1] = s;
    }
}

pub(crate) fn beta_unchecked(t: f64, theta: &ThetaParams) -> f64 {
    let base = 2.0 * PI * t / theta.period;
    let mut value = theta.alpha0;
    for (k, (a1, a2)) in theta.cos_coeffs.iter().zip(&theta.sin_coeffs).enumerate() {
        let (s, c) = (base * (k + 1) as f64).sin_cos();
        value += a1 * c + a2 * s;
    }
    value
}

pub(crate) fn beta_grad_into(t: f64, theta: &ThetaParams, out: &mut [f64]) {
    let base = 2.0 * PI * t / theta.period;
    let mut d_period = 0.0;
    out[1] = 1.0;
    for (k, (a1, a2)) in theta.cos_coeffs.iter().zip(&theta.sin_coeffs).enumerate() {
        let kf = (k + 1) as f64;
        let (s, c) = (base * kf).sin_cos();
        out[2 + 2 * k] = c;
        out[3 + 2 * k] = s;
        // d(arg)/d(period) = -arg / period
        d_period += kf * base / theta.period * (a1 * s - a2 * c);
    }
    out[0] = d_period;
}

/// Transmission rate at time `t`.
pub fn beta_eval(t: f64, theta: &ThetaParams) -> Result<f64> {
    check_period(theta.period)?;
    Ok(beta_unchecked(t, theta))
}

/// Gradient of the transmission rate with respect to the parameter vector.
pub fn beta_grad(t: f64, theta: &ThetaParams) -> Result<Vec<f64>> {
    check_period(theta.period)?;
    let mut out = vec![0.0; theta.dim()];
    beta_grad_into(t, theta, &mut out);
    Ok(out)
}

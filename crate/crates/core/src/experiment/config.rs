//! Run configuration in a flat `key = value` text format.
//!
//! Lines starting with `#` are comments. Lists are comma separated. Floats
//! are written in their shortest round-trip form, so `parse(render(cfg))`
//! reproduces `cfg` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::contrast::ContrastForm;
use crate::error::{Error, Result};
use crate::estimator::{BoxConstraints, EstimatorConfig, InnerSolver};
use crate::model::{ModelKind, SirParams, SirState};
use crate::transmission::ThetaParams;

/// Reference transmission parameters for the prediction study.
pub fn reference_theta() -> ThetaParams {
    ThetaParams::first_order(0.26836304, 0.15114833, 0.0621514, 0.096762).expect("valid constants")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Model constants; `eps` is ignored in favour of the lists below.
    pub params: SirParams,
    pub s0: SirState,
    pub eps: Vec<f64>,
    pub n_obs: usize,
    pub substeps: usize,
    /// Datasets drawn per noise level.
    pub datasets_generated: usize,
    /// Seeded subsample of the drawn datasets that is simulated and estimated.
    pub datasets_estimated: usize,
    pub contrast: ContrastForm,
    pub estimator: EstimatorConfig,
    pub bounds: BoxConstraints,
    pub seed: u64,
    pub out: PathBuf,
    /// Fixed parameters of the prediction and theory studies.
    pub theta0: ThetaParams,
    pub predict_eps: Vec<f64>,
    pub predict_horizon: f64,
    pub predict_paths: usize,
    pub rate_eps: Vec<f64>,
    pub rate_replications: usize,
    pub rate_n_obs: usize,
    pub limit_draws: usize,
    pub n_quad: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_model(ModelKind::Numbers)
    }
}

impl RunConfig {
    /// Desk-scale defaults for `model`.
    pub fn for_model(model: ModelKind) -> Self {
        let (params, s0, contrast) = match model {
            ModelKind::Numbers => (SirParams::numbers_default(), SirState::new(2.3, 0.19, 0.25), ContrastForm::Weighted),
            ModelKind::Proportions => (SirParams::proportions_default(), SirState::new(0.82, 0.07, 0.11), ContrastForm::Plain),
        };
        Self {
            model,
            params,
            s0,
            eps: vec![0.3, 0.1, 0.01, 0.001],
            n_obs: 100,
            substeps: 1,
            datasets_generated: 1000,
            datasets_estimated: 100,
            contrast,
            estimator: EstimatorConfig::default(),
            bounds: BoxConstraints::default(),
            seed: 1,
            out: PathBuf::from("runs"),
            theta0: reference_theta(),
            predict_eps: vec![0.3, 0.001],
            predict_horizon: 3.0,
            predict_paths: 100,
            rate_eps: vec![0.01, 0.001],
            rate_replications: 200,
            rate_n_obs: 100,
            limit_draws: 2000,
            n_quad: 2000,
        }
    }

    /// Full-scale dataset counts.
    pub fn full_scale(mut self) -> Self {
        self.datasets_generated = 10_000;
        self.datasets_estimated = 1000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate(self.model).map_err(|e| Error::Config(e.to_string()))?;
        self.s0_check()?;
        self.estimator.validate()?;
        self.bounds.validate()?;
        self.theta0.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.theta0.order() != self.estimator.order {
            return Err(Error::Config("theta0 order differs from the estimator order".into()));
        }
        if self.contrast == ContrastForm::Weighted && !self.model.has_invertible_diffusion() {
            return Err(Error::Config(format!("the {} model requires contrast = plain", self.model)));
        }
        for (key, list) in [("eps", &self.eps), ("predict_eps", &self.predict_eps), ("rate_eps", &self.rate_eps)] {
            if list.is_empty() || list.iter().any(|e| !(0.0..1.0).contains(e)) {
                return Err(Error::Config(format!("{key} must be a non-empty list of values in [0, 1)")));
            }
        }
        if self.rate_eps.contains(&0.0) {
            return Err(Error::Config("rate_eps must be positive: scaled errors need eps > 0".into()));
        }
        if self.n_obs == 0 || self.substeps == 0 || self.rate_n_obs == 0 {
            return Err(Error::Config("n_obs, rate_n_obs and substeps must be >= 1".into()));
        }
        if self.datasets_estimated == 0 || self.datasets_estimated > self.datasets_generated {
            return Err(Error::Config("need 1 <= datasets_estimated <= datasets_generated".into()));
        }
        if !(self.predict_horizon > 0.0) || self.predict_paths == 0 {
            return Err(Error::Config("prediction needs a positive horizon and at least one path".into()));
        }
        let steps = self.predict_horizon * self.n_obs as f64;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config("predict_horizon * n_obs must be an integer".into()));
        }
        if self.n_quad < 2 || self.n_quad % 2 == 1 {
            return Err(Error::Config("n_quad must be even and >= 2".into()));
        }
        Ok(())
    }

    fn s0_check(&self) -> Result<()> {
        let s = self.s0;
        if !s.is_finite() || s.x < 0.0 || s.y < 0.0 || s.z < 0.0 {
            return Err(Error::Config(format!("initial state {s:?} must be finite and non-negative")));
        }
        if self.model == ModelKind::Proportions && (s.total() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("proportional initial state must sum to 1".into()));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let e = &self.estimator;
        let b = &self.bounds;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("model", self.model.to_string());
        put("birth", fmt_f64(self.params.birth));
        put("mortality", fmt_f64(self.params.mortality));
        put("recovery", fmt_f64(self.params.recovery));
        put("sigma", fmt_f64(self.params.sigma));
        put("s0", fmt_list(&self.s0.to_array()));
        put("eps", fmt_list(&self.eps));
        put("n_obs", self.n_obs.to_string());
        put("substeps", self.substeps.to_string());
        put("datasets_generated", self.datasets_generated.to_string());
        put("datasets_estimated", self.datasets_estimated.to_string());
        put("contrast", self.contrast.to_string());
        put("cells", e.cells.to_string());
        put("order", e.order.to_string());
        put("learning_rate", fmt_f64(e.learning_rate));
        put("backtrack", fmt_f64(e.backtrack));
        put("sufficient_decrease", fmt_f64(e.sufficient_decrease));
        put("max_iter", e.max_iter.to_string());
        put("grad_tol", fmt_f64(e.grad_tol));
        put("inner", e.inner.to_string());
        put("initial_alpha", fmt_list(&e.initial_alpha));
        put("refine", e.refine.to_string());
        put("period_range", fmt_list(&[e.period_range.0, e.period_range.1]));
        put("box_period", fmt_list(&[b.period.0, b.period.1]));
        put("box_alpha0", fmt_list(&[b.alpha0.0, b.alpha0.1]));
        put("box_harmonic", fmt_list(&[b.harmonic.0, b.harmonic.1]));
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("theta0", fmt_list(&self.theta0.to_vec()));
        put("predict_eps", fmt_list(&self.predict_eps));
        put("predict_horizon", fmt_f64(self.predict_horizon));
        put("predict_paths", self.predict_paths.to_string());
        put("rate_eps", fmt_list(&self.rate_eps));
        put("rate_replications", self.rate_replications.to_string());
        put("rate_n_obs", self.rate_n_obs.to_string());
        put("limit_draws", self.limit_draws.to_string());
        put("n_quad", self.n_quad.to_string());
        out
    }

    /// Parses a config file body. Keys left out keep the defaults of the
    /// configured model.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{}`", lineno + 1, k.trim())));
            }
        }
        let model = match entries.remove("model") {
            Some(v) => v.parse()?,
            None => ModelKind::Numbers,
        };
        let mut cfg = Self::for_model(model);
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.estimator;
        let b = &mut self.bounds;
        match key {
            "model" => self.model = value.parse()?,
            "birth" => self.params.birth = num(key, value)?,
            "mortality" => self.params.mortality = num(key, value)?,
            "recovery" => self.params.recovery = num(key, value)?,
            "sigma" => self.params.sigma = num(key, value)?,
            "s0" => {
                let v = list::<3>(key, value)?;
                self.s0 = SirState::from_array(v);
            }
            "eps" => self.eps = nums(key, value)?,
            "n_obs" => self.n_obs = num(key, value)?,
            "substeps" => self.substeps = num(key, value)?,
            "datasets_generated" => self.datasets_generated = num(key, value)?,
            "datasets_estimated" => self.datasets_estimated = num(key, value)?,
            "contrast" => self.contrast = value.parse()?,
            "cells" => e.cells = num(key, value)?,
            "order" => e.order = num(key, value)?,
            "learning_rate" => e.learning_rate = num(key, value)?,
            "backtrack" => e.backtrack = num(key, value)?,
            "sufficient_decrease" => e.sufficient_decrease = num(key, value)?,
            "max_iter" => e.max_iter = num(key, value)?,
            "grad_tol" => e.grad_tol = num(key, value)?,
            "inner" => e.inner = value.parse::<InnerSolver>()?,
            "initial_alpha" => e.initial_alpha = nums(key, value)?,
            "refine" => e.refine = num(key, value)?,
            "period_range" => e.period_range = pair(key, value)?,
            "box_period" => b.period = pair(key, value)?,
            "box_alpha0" => b.alpha0 = pair(key, value)?,
            "box_harmonic" => b.harmonic = pair(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "theta0" => {
                self.theta0 = ThetaParams::from_slice(&nums(key, value)?).map_err(|e| Error::Parse(format!("theta0: {e}")))?
            }
            "predict_eps" => self.predict_eps = nums(key, value)?,
            "predict_horizon" => self.predict_horizon = num(key, value)?,
            "predict_paths" => self.predict_paths = num(key, value)?,
            "rate_eps" => self.rate_eps = nums(key, value)?,
            "rate_replications" => self.rate_replications = num(key, value)?,
            "rate_n_obs" => self.rate_n_obs = num(key, value)?,
            "limit_draws" => self.limit_draws = num(key, value)?,
            "n_quad" => self.n_quad = num(key, value)?,
            other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ")
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse(format!("{key}: cannot parse `{value}`")))
}

fn nums(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| num(key, v)).collect()
}

fn list<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let v = nums(key, value)?;
    v.try_into().map_err(|v: Vec<f64>| Error::Parse(format!("{key}: expected {N} values, got {}", v.len())))
}

fn pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let [a, b] = list::<2>(key, value)?;
    Ok((a, b))
}

//! Lévy drivers: Brownian motion plus finite-activity compound-Poisson jumps.
//!
//! The 3-dimensional driver superposes two Poisson random measures with total
//! rate `lambda`: mark `(-0.1, 0.1, 0)` at rate `2 lambda / 3` and mark
//! `(0, -0.1, 0.1)` at rate `lambda / 3`. The scalar driver jumps at rate
//! `lambda` with marks `±sqrt(0.02)`, equal in magnitude to the vector marks.
//! Every mark exceeds the large-jump threshold, so no compensated small-jump
//! term ever arises.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SimRng};

/// Marks with norm above this threshold are large jumps.
pub const LARGE_JUMP_THRESHOLD: f64 = 0.1;

/// Vector marks and their probabilities.
pub const VECTOR_MARKS: [([f64; 3], f64); 2] =
    [([-0.1, 0.1, 0.0], 2.0 / 3.0), ([0.0, -0.1, 0.1], 1.0 / 3.0)];

/// Magnitude of the scalar marks, `|(-0.1, 0.1, 0)| = sqrt(0.02)`.
pub fn scalar_mark_magnitude() -> f64 {
    0.02f64.sqrt()
}

const JUMP_STREAM: u64 = 0;
const BROWNIAN_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpConfig {
    pub rate: f64,
}

impl JumpConfig {
    pub fn new(rate: f64) -> Result<Self> {
        if [1.0, 2.0, 3.0, 4.0].contains(&rate) {
            Ok(Self { rate })
        } else {
            Err(Error::Domain(format!("jump rate {rate} not in {{1, 2, 3, 4}}")))
        }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self { rate: sample_lambda(rng) }
    }
}

/// Uniform draw from `{1, 2, 3, 4}`.
pub fn sample_lambda(rng: &mut impl Rng) -> f64 {
    rng.random_range(1..=4u32) as f64
}

/// One realisation of a Lévy driver on `(0, horizon]`.
///
/// Jump times and marks are materialised up front; Brownian increments are
/// drawn on demand from a dedicated stream, so a path is reproduced exactly by
/// replaying the same sequence of intervals.
#[derive(Debug, Clone)]
pub struct LevyPathNoise {
    seed: u64,
    rate: f64,
    horizon: f64,
    dim: usize,
    jump_times: Vec<f64>,
    // flattened, stride `dim`
    jump_marks: Vec<f64>,
    brownian: SimRng,
}

impl LevyPathNoise {
    /// Samples the driver as a pure function of `(seed, rate, horizon, dim)`.
    pub fn sample(seed: u64, rate: f64, horizon: f64, dim: usize) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Domain(format!("jump rate {rate} must be finite and >= 0")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon {horizon} must be positive")));
        }
        if dim != 1 && dim != 3 {
            return Err(Error::Domain(format!("driver dimension must be 1 or 3, got {dim}")));
        }
        let mut rng = stream(derive_seed(seed, &[JUMP_STREAM]));
        let mut jump_times = Vec::new();
        let mut jump_marks = Vec::new();
        if rate > 0.0 {
            let gaps = Exp::new(rate).expect("positive rate");
            let mut t = 0.0;
            loop {
                t += gaps.sample(&mut rng);
                if t > horizon {
                    break;
                }
                jump_times.push(t);
                if dim == 3 {
                    let u: f64 = rng.random();
                    let mark = if u < VECTOR_MARKS[0].1 { VECTOR_MARKS[0].0 } else { VECTOR_MARKS[1].0 };
                    jump_marks.extend_from_slice(&mark);
                } else {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    jump_marks.push(sign * scalar_mark_magnitude());
                }
            }
        }
        Ok(Self {
            seed,
            rate,
            horizon,
            dim,
            jump_times,
            jump_marks,
            brownian: stream(derive_seed(seed, &[BROWNIAN_STREAM])),
        })
    }

    /// Driver with prescribed jumps. `marks` is flattened with stride `dim`.
    pub fn with_jumps(seed: u64, horizon: f64, dim: usize, times: Vec<f64>, marks: Vec<f64>) -> Result<Self> {
        let mut out = Self::sample(seed, 0.0, horizon, dim)?;
        if marks.len() != times.len() * dim {
            return Err(Error::Domain("one mark of length `dim` per jump time is required".into()));
        }
        let sorted = times.windows(2).all(|w| w[0] < w[1]);
        if !sorted || times.iter().any(|&t| !(t > 0.0 && t <= horizon)) {
            return Err(Error::Domain("jump times must be strictly increasing within (0, horizon]".into()));
        }
        out.rate = times.len() as f64 / horizon;
        out.jump_times = times;
        out.jump_marks = marks;
        Ok(out)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    pub fn mark(&self, i: usize) -> &[f64] {
        &self.jump_marks[i * self.dim..(i + 1) * self.dim]
    }

    pub fn marks(&self) -> impl Iterator<Item = &[f64]> {
        self.jump_marks.chunks_exact(self.dim)
    }

    /// Same Brownian stream, no jumps.
    pub fn without_jumps(&self) -> Self {
        let mut out = self.clone();
        out.jump_times.clear();
        out.jump_marks.clear();
        out
    }

    /// Gaussian increment over `[t0, t1]` with covariance `(t1 - t0) I`.
    pub fn brownian_increment(&mut self, t0: f64, t1: f64) -> Result<Vec<f64>> {
        if !(t0 < t1) {
            return Err(Error::Domain(format!("empty interval [{t0}, {t1}]")));
        }
        let mut out = vec![0.0; self.dim];
        self.fill_brownian(t1 - t0, &mut out);
        Ok(out)
    }

    pub(crate) fn fill_brownian(&mut self, dt: f64, out: &mut [f64]) {
        let sd = dt.sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.brownian);
            *v = sd * z;
        }
    }
}

/// Draws a fresh seed from `rng` and samples a driver with it.
pub fn sample_jump_skeleton(rate: f64, horizon: f64, dim: usize, rng: &mut impl RngCore) -> Result<LevyPathNoise> {
    LevyPathNoise::sample(rng.next_u64(), rate, horizon, dim)
}

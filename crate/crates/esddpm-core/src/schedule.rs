//! Forward-process noise schedules.
//!
//! A schedule holds the per-step noise rates `beta[1..=T]` of the Markov
//! noising chain together with the derived tables `alpha[t] = 1 - beta[t]`
//! and `alpha_bar[t] = alpha[1] * ... * alpha[t]` (`alpha_bar[0] = 1`).
//! The two-step view of the chain:
//!
//! * single step: `x[t] = sqrt(1 - beta[t]) * x[t-1] + sqrt(beta[t]) * eps`
//! * closed-form jump: `x[t] = sqrt(alpha_bar[t]) * x[0] + sqrt(1 - alpha_bar[t]) * eps`
//!
//! Both take the noise draw as an argument so that callers own all
//! randomness.

use alloc::vec::Vec;
use thiserror::Error;

/// Schedule construction and evaluation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    /// The chain needs at least one step.
    #[error("schedule horizon must be at least 1")]
    EmptyHorizon,
    /// Every noise rate must lie strictly inside (0, 1).
    #[error("beta[{t}] = {beta} outside (0, 1)")]
    BetaOutOfRange { t: usize, beta: f64 },
    /// Step index outside the valid range for the operation.
    #[error("step {t} outside {min}..={max}")]
    StepOutOfRange { t: usize, min: usize, max: usize },
    /// Input vectors must agree in length.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    /// `1 - alpha_bar[t]` underflowed; the posterior is numerically undefined.
    #[error("noise mass at step {t} vanished; posterior undefined")]
    DegenerateNoise { t: usize },
}

/// Scale-and-noise parameters of a Gaussian conditional
/// `N(scale * x, noise_var * I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub scale: f64,
    pub noise_var: f64,
}

/// Noise schedule with precomputed cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[t]` for t in 0..=T, with `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly interpolated rates from `beta_start` at t = 1 to `beta_end`
    /// at t = T. A one-step schedule uses `beta_start` alone.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if t_max == 0 {
            return Err(ScheduleError::EmptyHorizon);
        }
        let mut betas = Vec::with_capacity(t_max);
        for i in 0..t_max {
            let frac = if t_max == 1 {
                0.0
            } else {
                i as f64 / (t_max - 1) as f64
            };
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit rates, validating each one.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::EmptyHorizon);
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(ScheduleError::BetaOutOfRange { t: i + 1, beta: b });
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of steps T.
    pub fn horizon(&self) -> usize {
        self.betas.len()
    }

    /// All rates `beta[1..=T]` in order.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `beta[t]` for t in 1..=T. Panics outside that range.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(
            t >= 1 && t <= self.horizon(),
            "beta: step {t} outside 1..={}",
            self.horizon()
        );
        self.betas[t - 1]
    }

    /// `alpha[t] = 1 - beta[t]` for t in 1..=T. Panics outside that range.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(
            t >= 1 && t <= self.horizon(),
            "alpha: step {t} outside 1..={}",
            self.horizon()
        );
        self.alphas[t - 1]
    }

    /// Cumulative product `alpha_bar[t]` for t in 0..=T, with
    /// `alpha_bar[0] = 1`. Panics outside that range.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(
            t <= self.horizon(),
            "alpha_bar: step {t} outside 0..={}",
            self.horizon()
        );
        self.alpha_bars[t]
    }

    /// Parameters of the jump conditional `x[t] | x[0]`, valid for t in 0..=T.
    pub fn marginal(&self, t: usize) -> Result<Marginal, ScheduleError> {
        if t > self.horizon() {
            return Err(ScheduleError::StepOutOfRange {
                t,
                min: 0,
                max: self.horizon(),
            });
        }
        let ab = self.alpha_bars[t];
        Ok(Marginal {
            scale: sqrt(ab),
            noise_var: 1.0 - ab,
        })
    }

    /// Jumps `x[0]` directly to step t using the provided standard-normal
    /// draw: `sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps`.
    pub fn diffuse_to(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, ScheduleError> {
        let m = self.marginal(t)?;
        if x0.len() != eps.len() {
            return Err(ScheduleError::DimMismatch {
                expected: x0.len(),
                got: eps.len(),
            });
        }
        let sd = sqrt(m.noise_var);
        Ok(x0
            .iter()
            .zip(eps)
            .map(|(&x, &e)| m.scale * x + sd * e)
            .collect())
    }

    /// Applies the single noising step t to `x[t-1]`, valid for t in 1..=T.
    pub fn forward_step(
        &self,
        x_prev: &[f64],
        t: usize,
        eps: &[f64],
    ) -> Result<Vec<f64>, ScheduleError> {
        if t < 1 || t > self.horizon() {
            return Err(ScheduleError::StepOutOfRange {
                t,
                min: 1,
                max: self.horizon(),
            });
        }
        if x_prev.len() != eps.len() {
            return Err(ScheduleError::DimMismatch {
                expected: x_prev.len(),
                got: eps.len(),
            });
        }
        let scale = sqrt(self.alphas[t - 1]);
        let sd = sqrt(self.betas[t - 1]);
        Ok(x_prev
            .iter()
            .zip(eps)
            .map(|(&x, &e)| scale * x + sd * e)
            .collect())
    }

    /// Variance of the reverse conditional `x[t-1] | x[t], x[0]`:
    /// `beta[t] * (1 - alpha_bar[t-1]) / (1 - alpha_bar[t])`. Zero at t = 1.
    /// Panics for t outside 1..=T.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        assert!(
            t >= 1 && t <= self.horizon(),
            "posterior_variance: step {t} outside 1..={}",
            self.horizon()
        );
        self.betas[t - 1] * (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t])
    }

    /// Mean and (isotropic) variance of `x[t-1] | x[t], x[0]`.
    ///
    /// The mean is the precision-weighted combination
    /// `(sqrt(alpha_bar[t-1]) * beta[t] * x0 + sqrt(alpha[t]) * (1 - alpha_bar[t-1]) * xt)
    ///  / (1 - alpha_bar[t])`.
    pub fn posterior_params(
        &self,
        x0: &[f64],
        xt: &[f64],
        t: usize,
    ) -> Result<(Vec<f64>, f64), ScheduleError> {
        if t < 1 || t > self.horizon() {
            return Err(ScheduleError::StepOutOfRange {
                t,
                min: 1,
                max: self.horizon(),
            });
        }
        if x0.len() != xt.len() {
            return Err(ScheduleError::DimMismatch {
                expected: x0.len(),
                got: xt.len(),
            });
        }
        let noise_mass = 1.0 - self.alpha_bars[t];
        if noise_mass <= f64::EPSILON {
            return Err(ScheduleError::DegenerateNoise { t });
        }
        let c0 = sqrt(self.alpha_bars[t - 1]) * self.betas[t - 1] / noise_mass;
        let ct = sqrt(self.alphas[t - 1]) * (1.0 - self.alpha_bars[t - 1]) / noise_mass;
        let mean = x0.iter().zip(xt).map(|(&a, &b)| c0 * a + ct * b).collect();
        Ok((mean, self.posterior_variance(t)))
    }
}

fn sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

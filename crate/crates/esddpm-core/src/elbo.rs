//! Evidence-bound evaluation for the early-stopped model.
//!
//! The generative model factors as a latent-variable base (encoder and
//! decoder) proposing a clean sample, a Gaussian prior injection at the
//! stop step, and the learned reverse chain below it. Its training
//! objective splits into a base term and a chain term whose sum bounds
//! the negative log-density of the data. This module evaluates both terms
//! (closed forms where they exist, Monte-Carlo estimates elsewhere) and
//! checks the bound itself on a family of fully tractable linear-Gaussian
//! instances where the exact log-density is available.

use alloc::vec;
use alloc::vec::Vec;
// Supplies the float transcendentals in no_std builds; the inherent
// methods shadow it when std is enabled.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::basegen::{BaseGenError, LatentVae};
use crate::diffusion::{DiffusionError, DiffusionModel, NoisePredictor};
use crate::schedule::{NoiseSchedule, ScheduleError};

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Bound-evaluation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElboError {
    #[error("variance must be positive")]
    NonPositiveVariance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("monte-carlo draw count must be at least 1")]
    NoDraws,
    #[error("step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("divergence term went negative ({value:e}) beyond roundoff")]
    NegativeKl { value: f64 },
    #[error("invalid instance: {0}")]
    BadInstance(&'static str),
    #[error("evidence bound violated: gap {gap:e} below -3 stderr {stderr:e}")]
    BoundViolated { gap: f64, stderr: f64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Base(#[from] BaseGenError),
}

/// A Monte-Carlo estimate with its standard error. The standard error is
/// zero when the integrand is deterministic or only one draw was taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Both loss terms, their implied lower bound on the data log-density,
/// and, on tractable instances, the exact value and the gap.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboReport {
    pub l_vae: f64,
    pub l_ddpm: f64,
    /// `-(l_vae + l_ddpm)`, a lower bound on the log-density.
    pub bound: f64,
    pub exact_loglik: Option<f64>,
    /// `exact_loglik - bound`; nonnegative up to Monte-Carlo error.
    pub gap: Option<f64>,
    pub mc_stderr: f64,
}

// ---------------------------------------------------------------------
// Closed-form KL
// ---------------------------------------------------------------------

/// KL divergence between two diagonal Gaussians, summed over coordinates:
/// `0.5 * (v1/v2 + (m2 - m1)^2 / v2 - 1 + ln(v2 / v1))` per coordinate.
pub fn gaussian_kl(
    mean1: &[f64],
    var1: &[f64],
    mean2: &[f64],
    var2: &[f64],
) -> Result<f64, ElboError> {
    let d = mean1.len();
    if var1.len() != d || mean2.len() != d || var2.len() != d {
        return Err(ElboError::DimMismatch {
            expected: d,
            got: var1.len().min(mean2.len()).min(var2.len()),
        });
    }
    let mut total = 0.0;
    for j in 0..d {
        let (v1, v2) = (var1[j], var2[j]);
        if v1 <= 0.0 || v2 <= 0.0 {
            return Err(ElboError::NonPositiveVariance);
        }
        let diff = mean2[j] - mean1[j];
        total += 0.5 * (v1 / v2 + diff * diff / v2 - 1.0 + (v2 / v1).ln());
    }
    Ok(total)
}

/// Weights of the squared-error reconstruction penalty induced by matching
/// the diffused data marginal against the diffused decoder output at the
/// stop step `t_prime`: the KL between those two equal-covariance
/// Gaussians is `c1 * |x0 - decoded|^2 + c2` with
/// `c1 = alpha_bar / (2 (1 - alpha_bar))` and `c2 = 0`.
pub fn prior_recon_constants(
    schedule: &NoiseSchedule,
    t_prime: usize,
) -> Result<(f64, f64), ScheduleError> {
    if t_prime < 1 || t_prime > schedule.horizon() {
        return Err(ScheduleError::StepOutOfRange {
            t: t_prime,
            min: 1,
            max: schedule.horizon(),
        });
    }
    let ab = schedule.alpha_bar(t_prime);
    let noise = 1.0 - ab;
    if noise <= f64::EPSILON {
        return Err(ScheduleError::DegenerateNoise { t: t_prime });
    }
    Ok((ab / (2.0 * noise), 0.0))
}

// ---------------------------------------------------------------------
// Base term
// ---------------------------------------------------------------------

/// Evaluates the base loss at one data point: the closed-form KL from the
/// latent conditional to the standard-normal prior, plus a Monte-Carlo
/// estimate of the weighted reconstruction error over latent draws.
pub fn eval_l_vae<V: LatentVae>(
    vae: &V,
    x0: &[f64],
    t_prime: usize,
    schedule: &NoiseSchedule,
    mc_draws: usize,
    rng: &mut impl Rng,
) -> Result<McEstimate, ElboError> {
    if mc_draws == 0 {
        return Err(ElboError::NoDraws);
    }
    if x0.len() != vae.data_dim() {
        return Err(ElboError::DimMismatch {
            expected: vae.data_dim(),
            got: x0.len(),
        });
    }
    let (c1, c2) = prior_recon_constants(schedule, t_prime)?;
    let (enc_mean, enc_var) = vae.encode(x0)?;
    let prior_mean = vec![0.0; enc_mean.len()];
    let prior_var = vec![1.0; enc_mean.len()];
    let kl = gaussian_kl(&enc_mean, &enc_var, &prior_mean, &prior_var)?;
    if kl < -1e-12 {
        return Err(ElboError::NegativeKl { value: kl });
    }

    let enc_sd: Vec<f64> = enc_var.iter().map(|&v| v.sqrt()).collect();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut z = vec![0.0; enc_mean.len()];
    for _ in 0..mc_draws {
        for (j, zj) in z.iter_mut().enumerate() {
            let xi: f64 = rng.sample(StandardNormal);
            *zj = enc_mean[j] + enc_sd[j] * xi;
        }
        let decoded = vae.decode(&z)?;
        let sq: f64 = x0
            .iter()
            .zip(&decoded)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let term = c1 * sq + c2;
        sum += term;
        sumsq += term * term;
    }
    let n = mc_draws as f64;
    let mean = sum / n;
    let stderr = if mc_draws > 1 {
        ((sumsq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        value: kl + mean,
        stderr,
    })
}

// ---------------------------------------------------------------------
// Chain term
// ---------------------------------------------------------------------

/// Anything exposing reverse-step conditionals `N(mean(x, t), var(t) I)`
/// over a schedule: the learned model, or explicit linear kernels on the
/// tractable instances.
pub trait ReverseChain {
    fn data_dim(&self) -> usize;
    /// Highest step of the chain (its stop step).
    fn horizon(&self) -> usize;
    fn schedule(&self) -> &NoiseSchedule;
    /// Mean of the reverse conditional at step `t` in `1..=horizon()`.
    fn mean(&self, xt: &[f64], t: usize) -> Result<Vec<f64>, ElboError>;
    /// Variance of the reverse conditional at step `t` in `1..=horizon()`.
    fn var(&self, t: usize) -> f64;
}

impl<P: NoisePredictor> ReverseChain for DiffusionModel<P> {
    fn data_dim(&self) -> usize {
        DiffusionModel::data_dim(self)
    }

    fn horizon(&self) -> usize {
        self.trained_horizon()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn mean(&self, xt: &[f64], t: usize) -> Result<Vec<f64>, ElboError> {
        Ok(self.reverse_mean(xt, t, None)?)
    }

    fn var(&self, t: usize) -> f64 {
        self.sigma_sq(t)
    }
}

/// Evaluates the chain loss at one data point: for every step above the
/// first, the Monte-Carlo expectation (over diffused states) of the KL
/// from the forward posterior to the model's reverse conditional; plus
/// the expected negative log-density of the data point under the first
/// reverse step. Standard errors of the independent terms combine in
/// quadrature.
pub fn eval_l_ddpm<C: ReverseChain>(
    chain: &C,
    x0: &[f64],
    mc_draws: usize,
    rng: &mut impl Rng,
) -> Result<McEstimate, ElboError> {
    if mc_draws == 0 {
        return Err(ElboError::NoDraws);
    }
    let d = chain.data_dim();
    if x0.len() != d {
        return Err(ElboError::DimMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    let s = chain.schedule();
    let t_prime = chain.horizon();
    let mut total = 0.0;
    let mut se_sq = 0.0;
    let mut eps = vec![0.0; d];
    let mut post_mean = vec![0.0; d];

    let mut accumulate = |sum: f64, sumsq: f64| {
        let n = mc_draws as f64;
        let mean = sum / n;
        total += mean;
        if mc_draws > 1 {
            se_sq += (sumsq / n - mean * mean).max(0.0) / (n - 1.0);
        }
    };

    for t in 2..=t_prime {
        let ab_t = s.alpha_bar(t);
        let ab_prev = s.alpha_bar(t - 1);
        let beta = s.beta(t);
        let alpha = s.alpha(t);
        let post_var = vec![s.posterior_variance(t); d];
        let model_var = chain.var(t);
        if model_var <= 0.0 {
            return Err(ElboError::NonPositiveVariance);
        }
        let model_var = vec![model_var; d];
        let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let coef_xt = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..mc_draws {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            let xt = s.diffuse_to(x0, t, &eps)?;
            for j in 0..d {
                post_mean[j] = coef_x0 * x0[j] + coef_xt * xt[j];
            }
            let model_mean = chain.mean(&xt, t)?;
            let kl = gaussian_kl(&post_mean, &post_var, &model_mean, &model_var)?;
            if kl < -1e-12 {
                return Err(ElboError::NegativeKl { value: kl });
            }
            sum += kl;
            sumsq += kl * kl;
        }
        accumulate(sum, sumsq);
    }

    let v1 = chain.var(1);
    if v1 <= 0.0 {
        return Err(ElboError::NonPositiveVariance);
    }
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..mc_draws {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let x1 = s.diffuse_to(x0, 1, &eps)?;
        let mean = chain.mean(&x1, 1)?;
        let nll: f64 = x0
            .iter()
            .zip(&mean)
            .map(|(&a, &m)| 0.5 * ((TWO_PI * v1).ln() + (a - m) * (a - m) / v1))
            .sum();
        sum += nll;
        sumsq += nll * nll;
    }
    accumulate(sum, sumsq);

    Ok(McEstimate {
        value: total,
        stderr: se_sq.sqrt(),
    })
}

// ---------------------------------------------------------------------
// Tractable instances
// ---------------------------------------------------------------------

/// One reverse conditional of a tractable 1-D chain:
/// `N(slope * x + intercept, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearKernel {
    pub slope: f64,
    pub intercept: f64,
    pub var: f64,
}

/// A fully tractable 1-D model: linear-Gaussian encoder and decoder over
/// a scalar latent, plus explicit linear reverse kernels. Every marginal
/// is Gaussian, so the exact data log-density follows from chaining the
/// affine maps, while the loss terms go through the same evaluators as
/// real models.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianInstance {
    schedule: NoiseSchedule,
    x0: f64,
    dec_slope: f64,
    dec_intercept: f64,
    enc_slope: f64,
    enc_intercept: f64,
    enc_var: f64,
    kernels: Vec<LinearKernel>,
}

/// Borrowed view of an instance's reverse kernels for the chain
/// evaluator.
#[derive(Debug, Clone, Copy)]
pub struct LinearChain<'a> {
    schedule: &'a NoiseSchedule,
    kernels: &'a [LinearKernel],
}

impl ReverseChain for LinearChain<'_> {
    fn data_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.kernels.len()
    }

    fn schedule(&self) -> &NoiseSchedule {
        self.schedule
    }

    fn mean(&self, xt: &[f64], t: usize) -> Result<Vec<f64>, ElboError> {
        if t < 1 || t > self.kernels.len() {
            return Err(ElboError::StepOutOfRange {
                t,
                max: self.kernels.len(),
            });
        }
        let k = &self.kernels[t - 1];
        Ok(xt.iter().map(|&x| k.slope * x + k.intercept).collect())
    }

    fn var(&self, t: usize) -> f64 {
        self.kernels[t - 1].var
    }
}

impl LinearGaussianInstance {
    /// Validates and adopts explicit parameters. `kernels[t - 1]` is the
    /// reverse conditional at step t; the stop step is `kernels.len()`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        schedule: NoiseSchedule,
        x0: f64,
        dec_slope: f64,
        dec_intercept: f64,
        enc_slope: f64,
        enc_intercept: f64,
        enc_var: f64,
        kernels: Vec<LinearKernel>,
    ) -> Result<Self, ElboError> {
        if kernels.is_empty() || kernels.len() > schedule.horizon() {
            return Err(ElboError::BadInstance(
                "kernel count must lie in 1..=schedule horizon",
            ));
        }
        if !(enc_var > 0.0 && enc_var.is_finite()) {
            return Err(ElboError::BadInstance("encoder variance must be positive"));
        }
        if kernels
            .iter()
            .any(|k| !(k.var > 0.0 && k.var.is_finite() && k.slope.is_finite() && k.intercept.is_finite()))
        {
            return Err(ElboError::BadInstance("kernel parameters must be finite, variances positive"));
        }
        let params = [x0, dec_slope, dec_intercept, enc_slope, enc_intercept];
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ElboError::BadInstance("parameters must be finite"));
        }
        Ok(LinearGaussianInstance {
            schedule,
            x0,
            dec_slope,
            dec_intercept,
            enc_slope,
            enc_intercept,
            enc_var,
            kernels,
        })
    }

    /// Builds the configuration whose bound is tight up to terms of order
    /// `spread^2`: decoder centered on the data point with slope `spread`,
    /// reverse kernels set to the exact Gauss-Markov reversal of the
    /// forward process started from `N(x0, spread^2)`, and encoder set to
    /// the exact latent conditional of the resulting joint. The small
    /// residual gap is the price of the factorized variational family,
    /// which severs the latent from the chain.
    pub fn tight(
        schedule: NoiseSchedule,
        t_prime: usize,
        x0: f64,
        spread: f64,
    ) -> Result<Self, ElboError> {
        if t_prime < 1 || t_prime > schedule.horizon() {
            return Err(ElboError::BadInstance(
                "stop step must lie in 1..=schedule horizon",
            ));
        }
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(ElboError::BadInstance("spread must be positive"));
        }
        let tau_sq = spread * spread;
        // Marginal moments of the forward process from N(x0, spread^2).
        let marg_mean = |t: usize| schedule.alpha_bar(t).sqrt() * x0;
        let marg_var = |t: usize| {
            let ab = schedule.alpha_bar(t);
            ab * tau_sq + (1.0 - ab)
        };
        let mut kernels = Vec::with_capacity(t_prime);
        for t in 1..=t_prime {
            let (v_prev, v_t) = (marg_var(t - 1), marg_var(t));
            let slope = schedule.alpha(t).sqrt() * v_prev / v_t;
            kernels.push(LinearKernel {
                slope,
                intercept: marg_mean(t - 1) - slope * marg_mean(t),
                var: v_prev * schedule.beta(t) / v_t,
            });
        }
        let ab = schedule.alpha_bar(t_prime);
        let v_top = marg_var(t_prime);
        // Latent conditional given the data point, through the decoder
        // coupling at the stop step.
        let enc_slope = ab * spread / v_top;
        let shrink = ab * tau_sq / v_top;
        LinearGaussianInstance::new(
            schedule,
            x0,
            spread,
            x0,
            enc_slope,
            -enc_slope * x0,
            1.0 - shrink * shrink,
            kernels,
        )
    }

    pub fn t_prime(&self) -> usize {
        self.kernels.len()
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Shifts the encoder mean, for probing how the bound loosens away
    /// from the exact posterior.
    pub fn perturb_encoder_mean(&mut self, delta: f64) {
        self.enc_intercept += delta;
    }

    pub fn chain(&self) -> LinearChain<'_> {
        LinearChain {
            schedule: &self.schedule,
            kernels: &self.kernels,
        }
    }

    /// Kernels as bare tuples, for cross-checking against quadrature.
    pub fn kernel_tuples(&self) -> Vec<(f64, f64, f64)> {
        self.kernels
            .iter()
            .map(|k| (k.slope, k.intercept, k.var))
            .collect()
    }

    /// Exact log-density of the data point under the generative model,
    /// by propagating the Gaussian law of the latent through the decoder,
    /// the prior injection, and each linear kernel in turn.
    pub fn exact_loglik(&self) -> f64 {
        let ab = self.schedule.alpha_bar(self.t_prime());
        let mut mean = ab.sqrt() * self.dec_intercept;
        let mut var = ab * self.dec_slope * self.dec_slope + (1.0 - ab);
        for k in self.kernels.iter().rev() {
            mean = k.slope * mean + k.intercept;
            var = k.slope * k.slope * var + k.var;
        }
        let diff = self.x0 - mean;
        -0.5 * ((TWO_PI * var).ln() + diff * diff / var)
    }
}

impl LatentVae for LinearGaussianInstance {
    fn data_dim(&self) -> usize {
        1
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn encode(&self, x0: &[f64]) -> Result<(Vec<f64>, Vec<f64>), BaseGenError> {
        Ok((
            vec![self.enc_slope * x0[0] + self.enc_intercept],
            vec![self.enc_var],
        ))
    }

    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, BaseGenError> {
        Ok(vec![self.dec_slope * z[0] + self.dec_intercept])
    }
}

/// Evaluates both loss terms on a tractable instance, compares their sum
/// against the exact log-density, and errors if the bound is violated
/// beyond three Monte-Carlo standard errors.
pub fn verify_elbo_bound(
    instance: &LinearGaussianInstance,
    mc_draws: usize,
    rng: &mut impl Rng,
) -> Result<ElboReport, ElboError> {
    let x0 = [instance.x0()];
    let l_vae = eval_l_vae(
        instance,
        &x0,
        instance.t_prime(),
        instance.schedule(),
        mc_draws,
        rng,
    )?;
    let l_ddpm = eval_l_ddpm(&instance.chain(), &x0, mc_draws, rng)?;
    let bound = -(l_vae.value + l_ddpm.value);
    let exact = instance.exact_loglik();
    let gap = exact - bound;
    let stderr = (l_vae.stderr * l_vae.stderr + l_ddpm.stderr * l_ddpm.stderr).sqrt();
    if gap < -3.0 * stderr {
        return Err(ElboError::BoundViolated { gap, stderr });
    }
    Ok(ElboReport {
        l_vae: l_vae.value,
        l_ddpm: l_ddpm.value,
        bound,
        exact_loglik: Some(exact),
        gap: Some(gap),
        mc_stderr: stderr,
    })
}

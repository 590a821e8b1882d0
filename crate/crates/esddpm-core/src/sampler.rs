//! Early-stopped sampling: base proposal, prior injection, short reverse
//! walk.
//!
//! One sample is produced in three moves. A base generator proposes a
//! clean vector. The proposal is pushed to the stop step by the
//! closed-form forward marginal (scaled mean plus Gaussian noise). The
//! reverse chain then walks a step plan back to zero, either with
//! ancestral steps (re-derived for skipped spans) or with deterministic
//! or partly stochastic jump steps. A stop step of zero degenerates to
//! the bare base generator; a stop step at the full horizon with a strong
//! base approaches the plain full-chain sampler.

use alloc::vec::Vec;
// Supplies the float transcendentals in no_std builds; the inherent
// methods shadow it when std is enabled.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::basegen::{BaseGenError, BaseGenerator};
use crate::diffusion::{DiffusionError, DiffusionModel, NoisePredictor};
use crate::nn::NnError;

/// Sampling failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid plan: {0}")]
    BadPlan(&'static str),
    #[error("plan stop step {t_prime} above trained horizon {horizon}")]
    PlanBeyondHorizon { t_prime: usize, horizon: usize },
    #[error("generator dimension {gen} does not match model dimension {model}")]
    GeneratorDimMismatch { gen: usize, model: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("target step {t_prev} is not below {t}")]
    BadStepOrder { t: usize, t_prev: usize },
    #[error("refine horizon {horizon} outside 1..={max}")]
    BadHorizon { horizon: usize, max: usize },
    #[error("variance guard tripped at step {t}: residual {value:e}")]
    NumericalGuard { t: usize, value: f64 },
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Base(#[from] BaseGenError),
    #[error(transparent)]
    Net(#[from] NnError),
}

/// Reverse-walk step rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanMode {
    /// Gaussian ancestral steps; variances follow the model's sigma mode,
    /// re-derived over skipped spans.
    #[default]
    Ancestral,
    /// Jump steps through the predicted clean point; `eta` interpolates
    /// from fully deterministic (0) to ancestral-matching noise (1).
    Ddim,
}

/// A stop step and the decreasing step sequence walked below it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerPlan {
    t_prime: usize,
    steps: Vec<usize>,
    mode: PlanMode,
    eta: f64,
}

impl SamplerPlan {
    /// Every step from the stop step down to 1. A stop step of zero gives
    /// the degenerate empty plan (base generator alone).
    pub fn full(t_prime: usize, mode: PlanMode) -> Self {
        SamplerPlan {
            t_prime,
            steps: (1..=t_prime).rev().collect(),
            mode,
            eta: 0.0,
        }
    }

    /// `n_steps` indices evenly spaced over `1..=t_prime`, always
    /// including both endpoints (so `n_steps` must be at least 2 whenever
    /// `t_prime > 1`). Rounding collisions are deduplicated, which can
    /// leave fewer than `n_steps` entries.
    pub fn uniform(
        t_prime: usize,
        n_steps: usize,
        mode: PlanMode,
        eta: f64,
    ) -> Result<Self, SamplerError> {
        if t_prime == 0 {
            return Err(SamplerError::BadPlan("uniform plan needs a stop step"));
        }
        if n_steps == 0 || n_steps > t_prime {
            return Err(SamplerError::BadPlan("step count outside 1..=stop step"));
        }
        if t_prime > 1 && n_steps < 2 {
            return Err(SamplerError::BadPlan(
                "a plan over more than one step must keep both endpoints",
            ));
        }
        let mut steps = Vec::with_capacity(n_steps);
        if n_steps == 1 {
            steps.push(1);
        } else {
            let span = (t_prime - 1) as f64 / (n_steps - 1) as f64;
            for i in 0..n_steps {
                #[allow(clippy::cast_possible_truncation, clippy::cast_sign_loss)]
                let t = (t_prime as f64 - i as f64 * span).round() as usize;
                if steps.last() != Some(&t) {
                    steps.push(t);
                }
            }
        }
        SamplerPlan::from_steps(t_prime, steps, mode, eta)
    }

    /// Validates and adopts an explicit step sequence.
    pub fn from_steps(
        t_prime: usize,
        steps: Vec<usize>,
        mode: PlanMode,
        eta: f64,
    ) -> Result<Self, SamplerError> {
        if !(eta.is_finite() && (0.0..=1.0).contains(&eta)) {
            return Err(SamplerError::BadPlan("eta outside [0, 1]"));
        }
        if t_prime == 0 {
            if !steps.is_empty() {
                return Err(SamplerError::BadPlan("degenerate plan must be empty"));
            }
        } else {
            if steps.first() != Some(&t_prime) {
                return Err(SamplerError::BadPlan("sequence must start at the stop step"));
            }
            if steps.last() != Some(&1) {
                return Err(SamplerError::BadPlan("sequence must end at step 1"));
            }
            if steps.windows(2).any(|w| w[1] >= w[0]) {
                return Err(SamplerError::BadPlan("sequence must strictly decrease"));
            }
        }
        Ok(SamplerPlan {
            t_prime,
            steps,
            mode,
            eta,
        })
    }

    pub fn t_prime(&self) -> usize {
        self.t_prime
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of denoiser evaluations one sample costs.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn check_state<P: NoisePredictor>(
    model: &DiffusionModel<P>,
    x: &[f64],
    t: usize,
    t_prev: usize,
) -> Result<(), SamplerError> {
    if x.len() != model.data_dim() {
        return Err(SamplerError::DimMismatch {
            expected: model.data_dim(),
            got: x.len(),
        });
    }
    if t < 1 || t > model.trained_horizon() {
        return Err(SamplerError::StepOutOfRange {
            t,
            max: model.trained_horizon(),
        });
    }
    if t_prev >= t {
        return Err(SamplerError::BadStepOrder { t, t_prev });
    }
    Ok(())
}

/// One ancestral reverse step from step `t` to step `t_prev` (0 meaning
/// the final output). For a consecutive pair this is exactly the dense
/// reverse step; over a skipped span the step rate and posterior variance
/// are re-derived from the marginal ratio. Steps landing at 0 are
/// noiseless.
pub fn ancestral_step<P: NoisePredictor>(
    model: &DiffusionModel<P>,
    xt: &[f64],
    t: usize,
    t_prev: usize,
    class: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SamplerError> {
    check_state(model, xt, t, t_prev)?;
    let s = &model.schedule;
    // The consecutive case reads the tabulated rates so that it agrees
    // bit-for-bit with the dense reverse step.
    let (alpha_eff, beta_eff) = if t_prev + 1 == t {
        (s.alpha(t), s.beta(t))
    } else {
        let a = s.alpha_bar(t) / s.alpha_bar(t_prev);
        (a, 1.0 - a)
    };
    let eps = model.net.predict(xt, t, class)?;
    let noise_scale = beta_eff / (1.0 - s.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha_eff.sqrt();
    let mut x: Vec<f64> = xt
        .iter()
        .zip(&eps)
        .map(|(&v, &e)| inv_sqrt_alpha * (v - noise_scale * e))
        .collect();
    if t_prev >= 1 {
        let var = match model.sigma_mode {
            crate::diffusion::SigmaMode::Beta => beta_eff,
            crate::diffusion::SigmaMode::BetaTilde => {
                if t_prev + 1 == t {
                    s.posterior_variance(t)
                } else {
                    beta_eff * (1.0 - s.alpha_bar(t_prev)) / (1.0 - s.alpha_bar(t))
                }
            }
        };
        let sd = var.sqrt();
        for v in &mut x {
            let xi: f64 = rng.sample(StandardNormal);
            *v += sd * xi;
        }
    }
    Ok(x)
}

/// One jump step from step `t` to step `t_prev` through the predicted
/// clean point: reconstruct it from the noise estimate, then re-noise to
/// the target marginal with stochasticity `eta` (0 deterministic, 1
/// matching the ancestral posterior variance on consecutive steps).
pub fn ddim_step<P: NoisePredictor>(
    model: &DiffusionModel<P>,
    xt: &[f64],
    t: usize,
    t_prev: usize,
    eta: f64,
    class: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SamplerError> {
    check_state(model, xt, t, t_prev)?;
    if !(eta.is_finite() && (0.0..=1.0).contains(&eta)) {
        return Err(SamplerError::BadPlan("eta outside [0, 1]"));
    }
    let s = &model.schedule;
    let ab_t = s.alpha_bar(t);
    let ab_prev = s.alpha_bar(t_prev);
    let eps = model.net.predict(xt, t, class)?;
    let sigma = eta
        * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt()
        * (1.0 - ab_t / ab_prev).sqrt();
    // Tiny negatives here are roundoff; anything larger is a real bug.
    let residual = 1.0 - ab_prev - sigma * sigma;
    if residual < -1e-12 {
        return Err(SamplerError::NumericalGuard {
            t,
            value: residual,
        });
    }
    let dir = residual.max(0.0).sqrt();
    let scale_x0 = ab_prev.sqrt();
    let inv_sqrt_ab_t = 1.0 / ab_t.sqrt();
    let noise_sd = (1.0 - ab_t).sqrt();
    let mut x: Vec<f64> = xt
        .iter()
        .zip(&eps)
        .map(|(&v, &e)| {
            let x0_hat = inv_sqrt_ab_t * (v - noise_sd * e);
            scale_x0 * x0_hat + dir * e
        })
        .collect();
    if sigma > 0.0 {
        for v in &mut x {
            let xi: f64 = rng.sample(StandardNormal);
            *v += sigma * xi;
        }
    }
    Ok(x)
}

/// Draws `n` samples by the early-stopped procedure: base proposal,
/// prior injection at the plan's stop step, reverse walk along the plan.
/// The degenerate empty plan returns the base proposals untouched and
/// draws nothing beyond them. Each sample costs exactly `plan.len()`
/// denoiser evaluations.
pub fn es_sample<P: NoisePredictor>(
    model: &DiffusionModel<P>,
    gen: &BaseGenerator,
    plan: &SamplerPlan,
    n: usize,
    class: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    if gen.data_dim() != model.data_dim() {
        return Err(SamplerError::GeneratorDimMismatch {
            gen: gen.data_dim(),
            model: model.data_dim(),
        });
    }
    if plan.t_prime() > model.trained_horizon() {
        return Err(SamplerError::PlanBeyondHorizon {
            t_prime: plan.t_prime(),
            horizon: model.trained_horizon(),
        });
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let proposal = gen.generate(rng, class)?;
        if plan.is_empty() {
            out.push(proposal);
            continue;
        }
        let marginal = model.schedule.marginal(plan.t_prime())?;
        let sd = marginal.noise_var.sqrt();
        let mut x: Vec<f64> = proposal
            .iter()
            .map(|&v| {
                let xi: f64 = rng.sample(StandardNormal);
                marginal.scale * v + sd * xi
            })
            .collect();
        for (j, &t) in plan.steps().iter().enumerate() {
            let t_prev = plan.steps().get(j + 1).copied().unwrap_or(0);
            x = match plan.mode() {
                PlanMode::Ancestral => ancestral_step(model, &x, t, t_prev, class, rng)?,
                PlanMode::Ddim => ddim_step(model, &x, t, t_prev, plan.eta(), class, rng)?,
            };
        }
        out.push(x);
    }
    Ok(out)
}

/// A coordinate-wise edit to refine: `replacement` overwrites `base`
/// wherever `mask` is set, and the result is re-noised to `horizon`
/// before walking every reverse step back down.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub base: Vec<f64>,
    pub mask: Vec<bool>,
    pub replacement: Vec<f64>,
    pub horizon: usize,
}

impl EditRequest {
    pub fn new(
        base: Vec<f64>,
        mask: Vec<bool>,
        replacement: Vec<f64>,
        horizon: usize,
    ) -> Result<Self, SamplerError> {
        if mask.len() != base.len() {
            return Err(SamplerError::DimMismatch {
                expected: base.len(),
                got: mask.len(),
            });
        }
        if replacement.len() != base.len() {
            return Err(SamplerError::DimMismatch {
                expected: base.len(),
                got: replacement.len(),
            });
        }
        Ok(EditRequest {
            base,
            mask,
            replacement,
            horizon,
        })
    }

    /// The base with the masked coordinates replaced.
    pub fn edited(&self) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.mask)
            .zip(&self.replacement)
            .map(|((&b, &m), &r)| if m { r } else { b })
            .collect()
    }
}

/// Applies the edit, diffuses the edited point to the refine horizon,
/// and denoises it back with dense reverse steps. Small horizons keep
/// the edit nearly intact; larger ones trade fidelity for smoothing the
/// edit into something the model finds likely.
pub fn edit_and_refine<P: NoisePredictor>(
    model: &DiffusionModel<P>,
    req: &EditRequest,
    class: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SamplerError> {
    if req.base.len() != model.data_dim() {
        return Err(SamplerError::DimMismatch {
            expected: model.data_dim(),
            got: req.base.len(),
        });
    }
    if req.horizon < 1 || req.horizon > model.trained_horizon() {
        return Err(SamplerError::BadHorizon {
            horizon: req.horizon,
            max: model.trained_horizon(),
        });
    }
    let edited = req.edited();
    let eps: Vec<f64> = (0..edited.len()).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = model.schedule.diffuse_to(&edited, req.horizon, &eps)?;
    for t in (1..=req.horizon).rev() {
        x = model.denoise_step(&x, t, class, rng)?;
    }
    Ok(x)
}

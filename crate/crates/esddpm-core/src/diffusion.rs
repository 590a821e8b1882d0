//! Denoising diffusion model: reverse steps and training.
//!
//! The model couples a noise schedule with a noise predictor and a trained
//! horizon `T' <= T`. Training regresses the predictor onto the injected
//! noise at uniformly drawn steps `t <= T'`; sampling runs the learned
//! reverse chain. Steps above the trained horizon are rejected, they were
//! never seen during training.
//!
//! Training is sequential and owns a counter-based RNG, so a run is
//! bit-for-bit reproducible from its seed and can be checkpointed and
//! resumed without changing the result.

use alloc::vec::Vec;
use core::cell::Cell;
// Supplies the float transcendentals in no_std builds; the inherent
// methods shadow it when std is enabled.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::nn::{adam_step, AdamState, GradientBuffer, Network, NnError};
use crate::schedule::{NoiseSchedule, ScheduleError};

/// Diffusion-level failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    /// Reverse step requested above the trained horizon.
    #[error("step {t} above trained horizon {horizon}")]
    UntrainedStep { t: usize, horizon: usize },
    /// Step outside the structural range of the operation.
    #[error("step {t} outside {min}..={max}")]
    StepOutOfRange { t: usize, min: usize, max: usize },
    /// The trained horizon must lie in 1..=T.
    #[error("trained horizon {t_prime} outside 1..={t_max}")]
    BadHorizon { t_prime: usize, t_max: usize },
    /// Full-chain sampling needs a model trained on the whole horizon.
    #[error("full-chain sampling needs T' = T, got T' = {t_prime}, T = {t_max}")]
    PartialHorizon { t_prime: usize, t_max: usize },
    /// Input vector length does not match the model dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    /// Training needs data.
    #[error("empty dataset or batch")]
    EmptyBatch,
    /// Labels must be supplied for every sample or not at all.
    #[error("labels length {got} does not match dataset length {expected}")]
    LabelMismatch { expected: usize, got: usize },
    /// Invalid training configuration value.
    #[error("invalid training configuration: {0}")]
    BadTrainConfig(&'static str),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Anything that predicts the injected noise for `(x, t, class)`.
///
/// `Network` is the trained implementation; tests and experiments plug in
/// closures through `FnPredictor`.
pub trait NoisePredictor {
    fn data_dim(&self) -> usize;
    fn predict(&self, x: &[f64], t: usize, class: Option<usize>) -> Result<Vec<f64>, NnError>;
}

impl NoisePredictor for Network {
    fn data_dim(&self) -> usize {
        Network::data_dim(self)
    }

    fn predict(&self, x: &[f64], t: usize, class: Option<usize>) -> Result<Vec<f64>, NnError> {
        self.predict_eps(x, t, class)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }

    fn predict(&self, x: &[f64], t: usize, class: Option<usize>) -> Result<Vec<f64>, NnError> {
        (**self).predict(x, t, class)
    }
}

/// Closure-backed predictor for stubs and analytic baselines.
pub struct FnPredictor<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], usize) -> Vec<f64>> FnPredictor<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnPredictor { dim, f }
    }
}

impl<F: Fn(&[f64], usize) -> Vec<f64>> NoisePredictor for FnPredictor<F> {
    fn data_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64], t: usize, _class: Option<usize>) -> Result<Vec<f64>, NnError> {
        Ok((self.f)(x, t))
    }
}

/// Wrapper counting how often the inner predictor is evaluated.
pub struct CountingPredictor<P> {
    inner: P,
    count: Cell<u64>,
}

impl<P: NoisePredictor> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        CountingPredictor {
            inner,
            count: Cell::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.get()
    }

    pub fn reset(&self) {
        self.count.set(0);
    }
}

impl<P: NoisePredictor> NoisePredictor for CountingPredictor<P> {
    fn data_dim(&self) -> usize {
        self.inner.data_dim()
    }

    fn predict(&self, x: &[f64], t: usize, class: Option<usize>) -> Result<Vec<f64>, NnError> {
        self.count.set(self.count.get() + 1);
        self.inner.predict(x, t, class)
    }
}

/// Choice of reverse-step variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// `sigma[t]^2 = beta[t]`.
    Beta,
    /// `sigma[t]^2 = beta[t] * (1 - alpha_bar[t-1]) / (1 - alpha_bar[t])`,
    /// the variance of the forward posterior.
    #[default]
    BetaTilde,
}

/// A noise schedule, a noise predictor, and the horizon the predictor was
/// trained on.
#[derive(Debug, Clone)]
pub struct DiffusionModel<P = Network> {
    pub net: P,
    pub schedule: NoiseSchedule,
    trained_horizon: usize,
    pub sigma_mode: SigmaMode,
}

impl<P: NoisePredictor> DiffusionModel<P> {
    pub fn new(
        net: P,
        schedule: NoiseSchedule,
        trained_horizon: usize,
        sigma_mode: SigmaMode,
    ) -> Result<Self, DiffusionError> {
        if trained_horizon == 0 || trained_horizon > schedule.horizon() {
            return Err(DiffusionError::BadHorizon {
                t_prime: trained_horizon,
                t_max: schedule.horizon(),
            });
        }
        Ok(DiffusionModel {
            net,
            schedule,
            trained_horizon,
            sigma_mode,
        })
    }

    pub fn trained_horizon(&self) -> usize {
        self.trained_horizon
    }

    pub fn data_dim(&self) -> usize {
        self.net.data_dim()
    }

    /// Same model with a different predictor, e.g. a counting wrapper.
    pub fn with_net<Q: NoisePredictor>(&self, net: Q) -> DiffusionModel<Q> {
        DiffusionModel {
            net,
            schedule: self.schedule.clone(),
            trained_horizon: self.trained_horizon,
            sigma_mode: self.sigma_mode,
        }
    }

    /// Reverse-step variance for t in 1..=T. The t = 1 step is
    /// deterministic when sampling; for likelihood evaluation its variance
    /// is `beta[1]` in both modes, since the posterior variance collapses
    /// to zero there.
    pub fn sigma_sq(&self, t: usize) -> f64 {
        match self.sigma_mode {
            SigmaMode::Beta => self.schedule.beta(t),
            SigmaMode::BetaTilde => {
                if t == 1 {
                    self.schedule.beta(1)
                } else {
                    self.schedule.posterior_variance(t)
                }
            }
        }
    }

    /// Mean of the reverse conditional:
    /// `(xt - beta[t] / sqrt(1 - alpha_bar[t]) * eps_hat) / sqrt(alpha[t])`.
    pub fn reverse_mean(
        &self,
        xt: &[f64],
        t: usize,
        class: Option<usize>,
    ) -> Result<Vec<f64>, DiffusionError> {
        self.check_step(t)?;
        self.check_dim(xt)?;
        let eps = self.net.predict(xt, t, class)?;
        let beta = self.schedule.beta(t);
        let noise_scale = beta / (1.0 - self.schedule.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / self.schedule.alpha(t).sqrt();
        Ok(xt
            .iter()
            .zip(&eps)
            .map(|(&x, &e)| inv_sqrt_alpha * (x - noise_scale * e))
            .collect())
    }

    /// One ancestral reverse step from `x[t]` to `x[t-1]`. The final step
    /// (t = 1) omits the noise term.
    pub fn denoise_step(
        &self,
        xt: &[f64],
        t: usize,
        class: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>, DiffusionError> {
        let mut x = self.reverse_mean(xt, t, class)?;
        if t > 1 {
            let sd = self.sigma_sq(t).sqrt();
            for v in &mut x {
                let xi: f64 = rng.sample(StandardNormal);
                *v += sd * xi;
            }
        }
        Ok(x)
    }

    /// Runs the whole reverse chain from standard-normal noise. Only valid
    /// for models trained on the full horizon.
    pub fn sample_full(
        &self,
        n: usize,
        class: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<f64>>, DiffusionError> {
        let t_max = self.schedule.horizon();
        if self.trained_horizon != t_max {
            return Err(DiffusionError::PartialHorizon {
                t_prime: self.trained_horizon,
                t_max,
            });
        }
        let d = self.data_dim();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for t in (1..=t_max).rev() {
                x = self.denoise_step(&x, t, class, rng)?;
            }
            out.push(x);
        }
        Ok(out)
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t < 1 || t > self.schedule.horizon() {
            return Err(DiffusionError::StepOutOfRange {
                t,
                min: 1,
                max: self.schedule.horizon(),
            });
        }
        if t > self.trained_horizon {
            return Err(DiffusionError::UntrainedStep {
                t,
                horizon: self.trained_horizon,
            });
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DiffusionError> {
        if x.len() != self.data_dim() {
            return Err(DiffusionError::DimMismatch {
                expected: self.data_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Mean squared noise-regression error over a batch, without
    /// gradients. Each sample draws its own step and noise from `rng`.
    pub fn batch_loss(
        &self,
        batch: &[&[f64]],
        labels: Option<&[usize]>,
        rng: &mut impl Rng,
    ) -> Result<f64, DiffusionError> {
        if batch.is_empty() {
            return Err(DiffusionError::EmptyBatch);
        }
        if let Some(l) = labels {
            if l.len() != batch.len() {
                return Err(DiffusionError::LabelMismatch {
                    expected: batch.len(),
                    got: l.len(),
                });
            }
        }
        let mut total = 0.0;
        for (i, x0) in batch.iter().enumerate() {
            self.check_dim(x0)?;
            let t = rng.random_range(1..=self.trained_horizon);
            let eps: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
            let xt = self.schedule.diffuse_to(x0, t, &eps)?;
            let pred = self.net.predict(&xt, t, labels.map(|l| l[i]))?;
            total += eps
                .iter()
                .zip(&pred)
                .map(|(e, p)| (p - e) * (p - e))
                .sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }
}

impl DiffusionModel<Network> {
    /// Loss and parameter gradients of the noise regression over a batch:
    /// mean over samples of `|eps - eps_hat(diffuse(x0, t, eps), t)|^2`
    /// with t uniform on `1..=T'`.
    pub fn batch_loss_grads(
        &self,
        batch: &[&[f64]],
        labels: Option<&[usize]>,
        rng: &mut impl Rng,
    ) -> Result<(f64, GradientBuffer), DiffusionError> {
        if batch.is_empty() {
            return Err(DiffusionError::EmptyBatch);
        }
        if let Some(l) = labels {
            if l.len() != batch.len() {
                return Err(DiffusionError::LabelMismatch {
                    expected: batch.len(),
                    got: l.len(),
                });
            }
        }
        let inv_b = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut grads = GradientBuffer::zeros_like(&self.net);
        for (i, x0) in batch.iter().enumerate() {
            self.check_dim(x0)?;
            let class = labels.map(|l| l[i]);
            let t = rng.random_range(1..=self.trained_horizon);
            let eps: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
            let xt = self.schedule.diffuse_to(x0, t, &eps)?;
            let (pred, cache) = self.net.forward_cached(&xt, t, class)?;
            total += eps
                .iter()
                .zip(&pred)
                .map(|(e, p)| (p - e) * (p - e))
                .sum::<f64>();
            // d/d pred of mean-over-batch squared error.
            let upstream: Vec<f64> = eps
                .iter()
                .zip(&pred)
                .map(|(e, p)| 2.0 * (p - e) * inv_b)
                .collect();
            let g = self.net.backprop_cached(&cache, &upstream)?;
            grads.accumulate(&g, 1.0)?;
        }
        Ok((total * inv_b, grads))
    }
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 4000,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Stateful training loop over a `DiffusionModel<Network>`.
///
/// The trainer owns its RNG and optimizer moments; `state` exposes both so
/// a checkpoint can capture them and `resume` can continue a run with
/// bit-for-bit the same trajectory as an uninterrupted one.
pub struct Trainer {
    pub model: DiffusionModel<Network>,
    opt: AdamState,
    rng: ChaCha8Rng,
    config: TrainConfig,
    iterations_done: u64,
}

/// Snapshot of the mutable training state, for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub iterations_done: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_step: u64,
}

impl Trainer {
    pub fn new(model: DiffusionModel<Network>, config: TrainConfig) -> Result<Self, DiffusionError> {
        if config.batch_size == 0 {
            return Err(DiffusionError::BadTrainConfig("zero batch size"));
        }
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(DiffusionError::BadTrainConfig("learning rate must be positive"));
        }
        let opt = AdamState::new(&model.net);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            model,
            opt,
            rng,
            config,
            iterations_done: 0,
        })
    }

    /// Restores a trainer from a checkpointed model and state snapshot.
    pub fn resume(
        model: DiffusionModel<Network>,
        config: TrainConfig,
        state: &TrainerState,
    ) -> Result<Self, DiffusionError> {
        let mut trainer = Trainer::new(model, config)?;
        trainer.opt = AdamState::from_parts(
            state.adam_m.clone(),
            state.adam_v.clone(),
            state.adam_step,
        )?;
        let mut rng = ChaCha8Rng::from_seed(state.rng_seed);
        rng.set_stream(state.rng_stream);
        rng.set_word_pos(state.rng_word_pos);
        trainer.rng = rng;
        trainer.iterations_done = state.iterations_done;
        Ok(trainer)
    }

    pub fn state(&self) -> TrainerState {
        let (m, v, step) = self.opt.parts();
        TrainerState {
            iterations_done: self.iterations_done,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
            adam_step: step,
        }
    }

    pub fn iterations_done(&self) -> u64 {
        self.iterations_done
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One optimization step on a batch drawn with replacement from
    /// `data`. Returns the batch loss before the update.
    pub fn step(
        &mut self,
        data: &[Vec<f64>],
        labels: Option<&[usize]>,
    ) -> Result<f64, DiffusionError> {
        if data.is_empty() {
            return Err(DiffusionError::EmptyBatch);
        }
        if let Some(l) = labels {
            if l.len() != data.len() {
                return Err(DiffusionError::LabelMismatch {
                    expected: data.len(),
                    got: l.len(),
                });
            }
        }
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.random_range(0..data.len()))
            .collect();
        let batch: Vec<&[f64]> = idx.iter().map(|&i| data[i].as_slice()).collect();
        let batch_labels: Option<Vec<usize>> =
            labels.map(|l| idx.iter().map(|&i| l[i]).collect());
        let (loss, grads) =
            self.model
                .batch_loss_grads(&batch, batch_labels.as_deref(), &mut self.rng)?;
        adam_step(
            &mut self.model.net,
            &grads,
            &mut self.opt,
            self.config.learning_rate,
        )?;
        self.iterations_done += 1;
        Ok(loss)
    }

    /// Runs `config.iterations` steps and returns the loss trace.
    pub fn run(
        &mut self,
        data: &[Vec<f64>],
        labels: Option<&[usize]>,
    ) -> Result<Vec<f64>, DiffusionError> {
        let mut losses = Vec::with_capacity(self.config.iterations);
        for _ in 0..self.config.iterations {
            losses.push(self.step(data, labels)?);
        }
        Ok(losses)
    }
}

/// Trains a fresh noise predictor on `data`; convenience wrapper around
/// `Trainer`. Returns the trained model and the loss trace.
pub fn train(
    model: DiffusionModel<Network>,
    data: &[Vec<f64>],
    labels: Option<&[usize]>,
    config: TrainConfig,
) -> Result<(DiffusionModel<Network>, Vec<f64>), DiffusionError> {
    let mut trainer = Trainer::new(model, config)?;
    let losses = trainer.run(data, labels)?;
    Ok((trainer.model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkConfig;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schedule(t: usize) -> NoiseSchedule {
        NoiseSchedule::linear(t, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn horizon_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(&NetworkConfig::new(1, 10), &mut rng).unwrap();
        assert!(matches!(
            DiffusionModel::new(net.clone(), schedule(10), 0, SigmaMode::BetaTilde),
            Err(DiffusionError::BadHorizon { .. })
        ));
        assert!(matches!(
            DiffusionModel::new(net.clone(), schedule(10), 11, SigmaMode::BetaTilde),
            Err(DiffusionError::BadHorizon { .. })
        ));
        let model = DiffusionModel::new(net, schedule(10), 5, SigmaMode::BetaTilde).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            model.denoise_step(&[0.0], 6, None, &mut r),
            Err(DiffusionError::UntrainedStep { t: 6, horizon: 5 })
        ));
        assert!(matches!(
            model.sample_full(1, None, &mut r),
            Err(DiffusionError::PartialHorizon { .. })
        ));
    }

    #[test]
    fn sigma_modes() {
        let s = schedule(100);
        let stub = FnPredictor::new(1, |_, _| vec![0.0]);
        let beta = DiffusionModel::new(&stub, s.clone(), 100, SigmaMode::Beta).unwrap();
        let tilde = DiffusionModel::new(&stub, s.clone(), 100, SigmaMode::BetaTilde).unwrap();
        for t in 2..=100 {
            assert_eq!(beta.sigma_sq(t), s.beta(t));
            assert_eq!(tilde.sigma_sq(t), s.posterior_variance(t));
            assert!(tilde.sigma_sq(t) <= beta.sigma_sq(t));
        }
        assert_eq!(tilde.sigma_sq(1), s.beta(1));
    }

    #[test]
    fn perfect_predictor_reverses_one_step() {
        // With eps_hat equal to the injected noise, the reverse mean at
        // t = 1 recovers x0 exactly up to roundoff.
        let s = schedule(100);
        let x0 = vec![0.8, -0.4];
        let eps = vec![0.3, -1.1];
        let x1 = s.diffuse_to(&x0, 1, &eps).unwrap();
        let eps_clone = eps.clone();
        let stub = FnPredictor::new(2, move |_, _| eps_clone.clone());
        let model = DiffusionModel::new(stub, s, 100, SigmaMode::BetaTilde).unwrap();
        let mean = model.reverse_mean(&x1, 1, None).unwrap();
        for (m, x) in mean.iter().zip(&x0) {
            assert!((m - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_zero_x0_loss_is_zero_with_oracle_stub() {
        // For x0 = 0 the noised point is sqrt(1 - alpha_bar[t]) * eps, so a
        // stub can reconstruct eps exactly and the loss vanishes.
        let s = schedule(50);
        let s2 = s.clone();
        let stub = FnPredictor::new(2, move |x: &[f64], t: usize| {
            let sd = (1.0 - s2.alpha_bar(t)).sqrt();
            x.iter().map(|v| v / sd).collect()
        });
        let model = DiffusionModel::new(stub, s, 50, SigmaMode::BetaTilde).unwrap();
        let zeros = vec![vec![0.0, 0.0]; 8];
        let batch: Vec<&[f64]> = zeros.iter().map(|v| v.as_slice()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let loss = model.batch_loss(&batch, None, &mut rng).unwrap();
        assert!(loss < 1e-24, "loss = {loss:e}");
    }

    #[test]
    fn zero_net_loss_near_data_dim() {
        // eps_hat = 0 makes the expected loss E|eps|^2 = d.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = Network::new(&NetworkConfig::new(3, 50), &mut rng).unwrap();
        let model = DiffusionModel::new(net, schedule(50), 50, SigmaMode::BetaTilde).unwrap();
        let data = vec![vec![0.0; 3]; 512];
        let batch: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let loss = model.batch_loss(&batch, None, &mut rng).unwrap();
        // Var of the estimate is 2d / n; allow five sigmas.
        assert!((loss - 3.0).abs() < 5.0 * (6.0f64 / 512.0).sqrt());
    }

    #[test]
    fn zero_net_full_chain_variance_matches_recursion() {
        // With eps_hat = 0 each reverse step is x / sqrt(alpha[t]) plus
        // sigma[t] noise, so the terminal variance obeys
        // v[t-1] = v[t] / alpha[t] + sigma[t]^2 from v[T] = 1, with the
        // final step noiseless.
        let t_max = 30;
        let s = schedule(t_max);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::new(&NetworkConfig::new(1, t_max), &mut rng).unwrap();
        let model = DiffusionModel::new(net, s.clone(), t_max, SigmaMode::Beta).unwrap();

        let mut expected = 1.0;
        for t in (2..=t_max).rev() {
            expected = expected / s.alpha(t) + model.sigma_sq(t);
        }
        expected /= s.alpha(1);

        let n = 4000;
        let samples = model.sample_full(n, None, &mut rng).unwrap();
        let mean: f64 = samples.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let var: f64 =
            samples.iter().map(|x| (x[0] - mean) * (x[0] - mean)).sum::<f64>() / (n - 1) as f64;
        // Sample variance of a Gaussian has sd ~ v * sqrt(2 / (n - 1)).
        let tol = 5.0 * expected * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (var - expected).abs() < tol,
            "variance {var} vs expected {expected} (tol {tol})"
        );
    }

    #[test]
    fn counting_predictor_counts() {
        let stub = FnPredictor::new(1, |_: &[f64], _| vec![0.0]);
        let counter = CountingPredictor::new(stub);
        let model = DiffusionModel::new(&counter, schedule(10), 10, SigmaMode::BetaTilde).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = vec![0.5];
        for t in (1..=10).rev() {
            x = model.denoise_step(&x, t, None, &mut rng).unwrap();
        }
        assert_eq!(counter.count(), 10);
    }

    #[test]
    fn trainer_is_deterministic_and_resumable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = NetworkConfig::new(1, 10).with_hidden(vec![8]);
        let data: Vec<Vec<f64>> = (0..32).map(|i| vec![(i as f64 / 16.0) - 1.0]).collect();
        let make_model = |rng: &mut ChaCha8Rng| {
            let net = Network::new(&cfg, rng).unwrap();
            DiffusionModel::new(net, schedule(10), 10, SigmaMode::BetaTilde).unwrap()
        };
        let train_cfg = TrainConfig {
            iterations: 40,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 77,
        };

        let model_a = make_model(&mut rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let model_b = make_model(&mut rng2);

        // Uninterrupted run.
        let mut full = Trainer::new(model_a, train_cfg.clone()).unwrap();
        for _ in 0..40 {
            full.step(&data, None).unwrap();
        }

        // Interrupted at 17 steps, snapshotted, resumed.
        let mut first = Trainer::new(model_b, train_cfg.clone()).unwrap();
        for _ in 0..17 {
            first.step(&data, None).unwrap();
        }
        let snap = first.state();
        let mut second = Trainer::resume(first.model, train_cfg, &snap).unwrap();
        for _ in 0..23 {
            second.step(&data, None).unwrap();
        }

        assert_eq!(
            full.model.net.flat_params(),
            second.model.net.flat_params(),
            "resumed run diverged from uninterrupted run"
        );
        assert_eq!(full.state(), second.state());
    }

    #[test]
    fn training_approaches_optimal_denoiser_on_gaussian_data() {
        // For x0 ~ N(0, 1) the least-squares noise predictor has the
        // closed form eps(x, t) = sqrt(1 - alpha_bar[t]) * x, with
        // expected loss alpha_bar[t]; both give the trained net an exact
        // target to be measured against.
        let t_max = 200;
        let s = schedule(t_max);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Vec<f64>> = (0..2048)
            .map(|_| vec![rng.sample(StandardNormal)])
            .collect();
        let cfg = NetworkConfig::new(1, t_max).with_hidden(vec![32]);
        let net = Network::new(&cfg, &mut rng).unwrap();
        let model = DiffusionModel::new(net, s.clone(), t_max, SigmaMode::BetaTilde).unwrap();
        let (trained, losses) = train(
            model,
            &data,
            None,
            TrainConfig {
                iterations: 800,
                batch_size: 64,
                learning_rate: 3e-3,
                seed: 5,
            },
        )
        .unwrap();

        let head: f64 = losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
        let floor: f64 = (1..=t_max).map(|t| s.alpha_bar(t)).sum::<f64>() / t_max as f64;
        assert!(
            tail < 0.75 * head,
            "loss did not decrease: head {head}, tail {tail}"
        );
        assert!(
            tail < 1.15 * floor,
            "loss stalled above the optimum: tail {tail}, floor {floor}"
        );

        for &t in &[20usize, 60, 120, 180] {
            for &x in &[-1.5f64, -0.5, 0.5, 1.5] {
                let pred = trained.net.predict_eps(&[x], t, None).unwrap()[0];
                let opt = (1.0 - s.alpha_bar(t)).sqrt() * x;
                assert!(
                    (pred - opt).abs() < 0.2,
                    "t = {t}, x = {x}: predicted {pred}, optimal {opt}"
                );
            }
        }
    }
}

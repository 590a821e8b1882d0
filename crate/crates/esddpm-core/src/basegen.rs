//! Base generators: the cheap models whose output the truncated reverse
//! chain refines.
//!
//! Three kinds cover the quality spectrum. A diagonal Gaussian mixture is
//! the weak, possibly deliberately mis-fit baseline; a small
//! latent-variable autoencoder is the middle ground and carries the
//! encoder needed for bound evaluation; an oracle resampler replays held
//! training data with a little jitter and acts as the quality ceiling.
//! All three answer the same call: draw one clean proposal vector, with
//! or without a class label.

use alloc::vec;
use alloc::vec::Vec;
// Supplies the float transcendentals in no_std builds; the inherent
// methods shadow it when std is enabled.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::elbo::prior_recon_constants;
use crate::nn::{Activation, AdamState, ClassEmbedding, Mlp, NnError};
use crate::schedule::{NoiseSchedule, ScheduleError};

/// Smallest admissible mixture variance; EM clamps to it.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Default oracle jitter standard deviation.
pub const DEFAULT_JITTER: f64 = 1e-3;
/// Encoder log-variances are clamped to this symmetric range.
pub const LOGVAR_BOUND: f64 = 10.0;

/// Base-generator failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaseGenError {
    #[error("empty dataset")]
    EmptyData,
    #[error("{n} data points cannot support {k} components")]
    TooFewPoints { n: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameters: {0}")]
    BadParams(&'static str),
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("labels length {got} does not match dataset length {expected}")]
    LabelMismatch { expected: usize, got: usize },
    #[error("class {class} outside 0..{count}")]
    ClassOutOfRange { class: usize, count: usize },
    #[error("class {class} has no data")]
    EmptyClass { class: usize },
    #[error("conditional generator needs a label")]
    MissingLabel,
    #[error("unconditional generator got a label")]
    UnexpectedLabel,
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

fn check_dataset(data: &[Vec<f64>]) -> Result<usize, BaseGenError> {
    if data.is_empty() {
        return Err(BaseGenError::EmptyData);
    }
    let d = data[0].len();
    if d == 0 {
        return Err(BaseGenError::BadParams("zero-dimensional data"));
    }
    for x in data {
        if x.len() != d {
            return Err(BaseGenError::DimMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BaseGenError::NonFinite("dataset"));
        }
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn add_scaled(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += scale * b;
    }
}

// ---------------------------------------------------------------------
// Gaussian mixture
// ---------------------------------------------------------------------

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GmmParams {
    /// Validates the simplex, the shapes, and the variance floor.
    pub fn from_parts(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    ) -> Result<Self, BaseGenError> {
        let k = weights.len();
        if k == 0 {
            return Err(BaseGenError::BadParams("no components"));
        }
        if means.len() != k || variances.len() != k {
            return Err(BaseGenError::BadParams("component count mismatch"));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(BaseGenError::BadParams("zero-dimensional components"));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != d || v.len() != d {
                return Err(BaseGenError::BadParams("ragged component shapes"));
            }
            if m.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
                return Err(BaseGenError::NonFinite("mixture parameters"));
            }
            if v.iter().any(|&x| x < VARIANCE_FLOOR) {
                return Err(BaseGenError::BadParams("variance below floor"));
            }
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(BaseGenError::BadParams("negative or non-finite weight"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BaseGenError::BadParams("weights do not sum to 1"));
        }
        Ok(GmmParams {
            weights,
            means,
            variances,
        })
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn data_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Log-density of the mixture at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64, BaseGenError> {
        if x.len() != self.data_dim() {
            return Err(BaseGenError::DimMismatch {
                expected: self.data_dim(),
                got: x.len(),
            });
        }
        let logs: Vec<f64> = (0..self.component_count())
            .map(|k| self.weights[k].ln() + diag_gauss_log_pdf(x, &self.means[k], &self.variances[k]))
            .collect();
        Ok(log_sum_exp(&logs))
    }

    /// Ancestral draw: a component by weight, then its Gaussian.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = k;
                break;
            }
        }
        self.means[comp]
            .iter()
            .zip(&self.variances[comp])
            .map(|(&m, &v)| {
                let xi: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * xi
            })
            .collect()
    }
}

fn diag_gauss_log_pdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let ln_2pi = (2.0 * core::f64::consts::PI).ln();
    -0.5 * x
        .iter()
        .zip(mean)
        .zip(var)
        .map(|((&xj, &mj), &vj)| ln_2pi + vj.ln() + (xj - mj) * (xj - mj) / vj)
        .sum::<f64>()
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logs.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

/// A fitted mixture together with its per-iteration log-likelihood trace
/// (mean log-density of the data, one entry per EM iteration).
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub params: GmmParams,
    pub log_likelihood: Vec<f64>,
}

/// Fits a diagonal Gaussian mixture by expectation-maximization.
///
/// Means are seeded by distance-weighted sampling (each new seed is drawn
/// with probability proportional to its squared distance from the seeds
/// so far). Components that lose all responsibility mass are re-seeded
/// from a random datum. Stops after `max_iters` iterations or when the
/// log-likelihood improvement falls below a relative 1e-8.
pub fn fit_gmm(
    data: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    rng: &mut impl Rng,
) -> Result<GmmFit, BaseGenError> {
    let d = check_dataset(data)?;
    let n = data.len();
    if k == 0 {
        return Err(BaseGenError::BadParams("zero components"));
    }
    if n < k {
        return Err(BaseGenError::TooFewPoints { n, k });
    }

    // Global diagonal variance, the fallback spread for seeds.
    let mut global_mean = vec![0.0; d];
    for x in data {
        add_scaled(&mut global_mean, x, 1.0);
    }
    for m in &mut global_mean {
        *m /= n as f64;
    }
    let mut global_var = vec![0.0; d];
    for x in data {
        for (g, (&xj, &mj)) in global_var.iter_mut().zip(x.iter().zip(&global_mean)) {
            *g += (xj - mj) * (xj - mj);
        }
    }
    for g in &mut global_var {
        *g = (*g / n as f64).max(VARIANCE_FLOOR);
    }

    // Distance-weighted seeding.
    let mut means: Vec<Vec<f64>> = vec![data[rng.random_range(0..n)].clone()];
    while means.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| {
                means
                    .iter()
                    .map(|m| sq_dist(x, m))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        means.push(data[idx].clone());
    }
    let mut weights = vec![1.0 / k as f64; k];
    let mut variances = vec![global_var.clone(); k];

    let mut trace = Vec::new();
    let mut resp = vec![vec![0.0; k]; n];
    for _ in 0..max_iters.max(1) {
        // E-step and log-likelihood.
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|c| weights[c].ln() + diag_gauss_log_pdf(x, &means[c], &variances[c]))
                .collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for c in 0..k {
                resp[i][c] = (logs[c] - lse).exp();
            }
        }
        ll /= n as f64;

        // M-step with re-seeding of empty components.
        let mut masses = vec![0.0; k];
        for r in &resp {
            for (mass, &rc) in masses.iter_mut().zip(r) {
                *mass += rc;
            }
        }
        for c in 0..k {
            if masses[c] <= 1e-10 {
                means[c] = data[rng.random_range(0..n)].clone();
                variances[c] = global_var.clone();
                masses[c] = 1.0;
                continue;
            }
            for m in &mut means[c] {
                *m = 0.0;
            }
            for (i, x) in data.iter().enumerate() {
                add_scaled(&mut means[c], x, resp[i][c]);
            }
            for m in &mut means[c] {
                *m /= masses[c];
            }
            for v in &mut variances[c] {
                *v = 0.0;
            }
            for (i, x) in data.iter().enumerate() {
                for (v, (&xj, &mj)) in variances[c].iter_mut().zip(x.iter().zip(&means[c])) {
                    *v += resp[i][c] * (xj - mj) * (xj - mj);
                }
            }
            for v in &mut variances[c] {
                *v = (*v / masses[c]).max(VARIANCE_FLOOR);
            }
        }
        let mass_total: f64 = masses.iter().sum();
        for (w, &mass) in weights.iter_mut().zip(&masses) {
            *w = mass / mass_total;
        }

        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= 1e-8 * ll.abs().max(1.0));
        trace.push(ll);
        if done {
            break;
        }
    }

    // Exact renormalization so the simplex invariant holds bit-for-bit.
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(GmmFit {
        params: GmmParams::from_parts(weights, means, variances)?,
        log_likelihood: trace,
    })
}

// ---------------------------------------------------------------------
// Latent-variable autoencoder
// ---------------------------------------------------------------------

/// Encoder and decoder of the latent-variable base.
///
/// Unconditional form: the encoder maps a data vector to the mean and
/// log-variance of the latent conditional, the decoder maps a latent
/// vector back to data space. Conditional form: the encoder reads only a
/// class embedding (a per-class latent prior) and the decoder reads the
/// latent vector concatenated with the same embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    encoder: Mlp,
    decoder: Mlp,
    latent_dim: usize,
    data_dim: usize,
    classes: Option<ClassEmbedding>,
}

/// Encoder and decoder of a latent-variable base, seen by bound
/// evaluation: a Gaussian latent conditional and a deterministic decode.
pub trait LatentVae {
    fn data_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    /// Mean and per-coordinate variance of the latent conditional at `x0`.
    fn encode(&self, x0: &[f64]) -> Result<(Vec<f64>, Vec<f64>), BaseGenError>;
    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, BaseGenError>;
}

impl VaeParams {
    /// Validates that the pieces chain: encoder output is twice the
    /// latent dimension, decoder output is the data dimension, and the
    /// input widths match the conditional or unconditional wiring.
    pub fn from_parts(
        encoder: Mlp,
        decoder: Mlp,
        latent_dim: usize,
        data_dim: usize,
        classes: Option<ClassEmbedding>,
    ) -> Result<Self, BaseGenError> {
        if latent_dim == 0 || data_dim == 0 {
            return Err(BaseGenError::BadParams("zero dimension"));
        }
        if encoder.out_dim() != 2 * latent_dim {
            return Err(BaseGenError::BadParams(
                "encoder output must be twice the latent dimension",
            ));
        }
        if decoder.out_dim() != data_dim {
            return Err(BaseGenError::BadParams(
                "decoder output must match the data dimension",
            ));
        }
        let (want_enc, want_dec) = match &classes {
            Some(emb) => (emb.dim(), latent_dim + emb.dim()),
            None => (data_dim, latent_dim),
        };
        if encoder.in_dim() != want_enc {
            return Err(BaseGenError::BadParams("encoder input width"));
        }
        if decoder.in_dim() != want_dec {
            return Err(BaseGenError::BadParams("decoder input width"));
        }
        Ok(VaeParams {
            encoder,
            decoder,
            latent_dim,
            data_dim,
            classes,
        })
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn classes(&self) -> Option<&ClassEmbedding> {
        self.classes.as_ref()
    }

    pub fn is_conditional(&self) -> bool {
        self.classes.is_some()
    }

    /// Latent conditional for a class, from the per-class embedding.
    pub fn encode_class(&self, class: usize) -> Result<(Vec<f64>, Vec<f64>), BaseGenError> {
        let emb = self.classes.as_ref().ok_or(BaseGenError::UnexpectedLabel)?;
        let row = emb.row(class).map_err(|_| BaseGenError::ClassOutOfRange {
            class,
            count: emb.count(),
        })?;
        Ok(split_encoder_output(
            &self.encoder.forward(row),
            self.latent_dim,
        ))
    }

    /// Decode with the class embedding appended to the latent vector.
    pub fn decode_class(&self, z: &[f64], class: usize) -> Result<Vec<f64>, BaseGenError> {
        let emb = self.classes.as_ref().ok_or(BaseGenError::UnexpectedLabel)?;
        if z.len() != self.latent_dim {
            return Err(BaseGenError::DimMismatch {
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        let row = emb.row(class).map_err(|_| BaseGenError::ClassOutOfRange {
            class,
            count: emb.count(),
        })?;
        let mut input = Vec::with_capacity(self.decoder.in_dim());
        input.extend_from_slice(z);
        input.extend_from_slice(row);
        Ok(self.decoder.forward(&input))
    }

    /// One generated sample: a standard-normal latent through the decoder
    /// (unconditional), or a latent drawn from the class conditional
    /// (conditional).
    pub fn generate(
        &self,
        rng: &mut impl Rng,
        class: Option<usize>,
    ) -> Result<Vec<f64>, BaseGenError> {
        match (self.is_conditional(), class) {
            (false, None) => {
                let z: Vec<f64> = (0..self.latent_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                LatentVae::decode(self, &z)
            }
            (true, Some(c)) => {
                let (mean, var) = self.encode_class(c)?;
                let z: Vec<f64> = mean
                    .iter()
                    .zip(&var)
                    .map(|(&m, &v)| {
                        let xi: f64 = rng.sample(StandardNormal);
                        m + v.sqrt() * xi
                    })
                    .collect();
                self.decode_class(&z, c)
            }
            (true, None) => Err(BaseGenError::MissingLabel),
            (false, Some(_)) => Err(BaseGenError::UnexpectedLabel),
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.decoder.param_count()
            + self.classes.as_ref().map_or(0, |c| c.table().len())
    }

    /// All parameters in a fixed order: encoder, decoder, class table.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.encoder.flat_params();
        out.extend_from_slice(&self.decoder.flat_params());
        if let Some(c) = &self.classes {
            out.extend_from_slice(c.table());
        }
        out
    }

    /// Restores parameters written by `flat_params`.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), BaseGenError> {
        if flat.len() != self.param_count() {
            return Err(BaseGenError::BadParams("flat parameter length"));
        }
        let ne = self.encoder.param_count();
        let nd = self.decoder.param_count();
        self.encoder.set_flat_params(&flat[..ne])?;
        self.decoder.set_flat_params(&flat[ne..ne + nd])?;
        if let Some(c) = &mut self.classes {
            c.table.copy_from_slice(&flat[ne + nd..]);
        }
        Ok(())
    }
}

impl LatentVae for VaeParams {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn encode(&self, x0: &[f64]) -> Result<(Vec<f64>, Vec<f64>), BaseGenError> {
        if self.is_conditional() {
            return Err(BaseGenError::MissingLabel);
        }
        if x0.len() != self.data_dim {
            return Err(BaseGenError::DimMismatch {
                expected: self.data_dim,
                got: x0.len(),
            });
        }
        Ok(split_encoder_output(
            &self.encoder.forward(x0),
            self.latent_dim,
        ))
    }

    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, BaseGenError> {
        if self.is_conditional() {
            return Err(BaseGenError::MissingLabel);
        }
        if z.len() != self.latent_dim {
            return Err(BaseGenError::DimMismatch {
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        Ok(self.decoder.forward(z))
    }
}

/// Splits raw encoder output `[mean | log-variance]` and exponentiates
/// the clamped log-variances.
fn split_encoder_output(raw: &[f64], latent_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mean = raw[..latent_dim].to_vec();
    let var = raw[latent_dim..]
        .iter()
        .map(|&l| l.clamp(-LOGVAR_BOUND, LOGVAR_BOUND).exp())
        .collect();
    (mean, var)
}

/// Hyperparameters of an autoencoder training run.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub activation: Activation,
    /// Stop step whose marginal sets the reconstruction weight.
    pub t_prime: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `Some(count)` trains the conditional form.
    pub class_count: Option<usize>,
    pub class_emb_dim: usize,
}

impl VaeConfig {
    pub fn new(latent_dim: usize, t_prime: usize) -> Self {
        VaeConfig {
            latent_dim,
            enc_hidden: vec![64, 64],
            dec_hidden: vec![64, 64],
            activation: Activation::Tanh,
            t_prime,
            iterations: 3000,
            batch_size: 128,
            learning_rate: 1e-3,
            class_count: None,
            class_emb_dim: 16,
        }
    }

    pub fn with_classes(mut self, count: usize) -> Self {
        self.class_count = Some(count);
        self
    }
}

/// A trained autoencoder together with its per-iteration loss trace.
#[derive(Debug, Clone)]
pub struct VaeFit {
    pub params: VaeParams,
    pub loss: Vec<f64>,
}

/// Trains the latent-variable base by stochastic gradient descent on
/// `KL(latent conditional || standard normal) + c1 |x0 - decoded|^2`,
/// with the latent draw reparameterized and `c1` the reconstruction
/// weight induced by the stop step `config.t_prime` of `schedule`.
pub fn train_vae(
    data: &[Vec<f64>],
    labels: Option<&[usize]>,
    schedule: &NoiseSchedule,
    config: &VaeConfig,
    rng: &mut impl Rng,
) -> Result<VaeFit, BaseGenError> {
    let d = check_dataset(data)?;
    let n = data.len();
    match (labels, config.class_count) {
        (Some(l), Some(count)) => {
            if l.len() != n {
                return Err(BaseGenError::LabelMismatch {
                    expected: n,
                    got: l.len(),
                });
            }
            if let Some(&bad) = l.iter().find(|&&c| c >= count) {
                return Err(BaseGenError::ClassOutOfRange { class: bad, count });
            }
        }
        (None, None) => {}
        (Some(_), None) => return Err(BaseGenError::BadConfig("labels without class count")),
        (None, Some(_)) => return Err(BaseGenError::BadConfig("class count without labels")),
    }
    if config.latent_dim == 0 {
        return Err(BaseGenError::BadConfig("zero latent dimension"));
    }
    if config.batch_size == 0 {
        return Err(BaseGenError::BadConfig("zero batch size"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(BaseGenError::BadConfig("learning rate must be positive"));
    }
    let (c1, _) = prior_recon_constants(schedule, config.t_prime)?;

    let classes = match config.class_count {
        Some(count) => Some(ClassEmbedding::new(count, config.class_emb_dim, rng)?),
        None => None,
    };
    let enc_in = classes.as_ref().map_or(d, |c| c.dim());
    let dec_in = config.latent_dim + classes.as_ref().map_or(0, |c| c.dim());
    let mut enc_widths = vec![enc_in];
    enc_widths.extend_from_slice(&config.enc_hidden);
    enc_widths.push(2 * config.latent_dim);
    let mut dec_widths = vec![dec_in];
    dec_widths.extend_from_slice(&config.dec_hidden);
    dec_widths.push(d);
    let encoder = Mlp::new(&enc_widths, config.activation, false, rng)?;
    let decoder = Mlp::new(&dec_widths, config.activation, false, rng)?;
    let mut vae = VaeParams::from_parts(encoder, decoder, config.latent_dim, d, classes)?;

    let mut opt = AdamState::with_len(vae.param_count());
    let mut flat = vae.flat_params();
    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..n))
            .collect();
        let batch: Vec<&[f64]> = idx.iter().map(|&i| data[i].as_slice()).collect();
        let batch_labels: Option<Vec<usize>> =
            labels.map(|l| idx.iter().map(|&i| l[i]).collect());
        let xi: Vec<Vec<f64>> = (0..batch.len())
            .map(|_| {
                (0..config.latent_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect()
            })
            .collect();
        let (loss, grads) = vae_loss_grads(&vae, &batch, batch_labels.as_deref(), &xi, c1);
        if !loss.is_finite() {
            return Err(BaseGenError::NonFiniteLoss { iteration });
        }
        opt.update(&mut flat, &grads, config.learning_rate)?;
        vae.set_flat_params(&flat)?;
        trace.push(loss);
    }
    Ok(VaeFit {
        params: vae,
        loss: trace,
    })
}

/// Batch objective and its gradient in `flat_params` order. `xi` holds
/// the reparameterization draws, one latent-dimension vector per sample.
fn vae_loss_grads(
    vae: &VaeParams,
    batch: &[&[f64]],
    labels: Option<&[usize]>,
    xi: &[Vec<f64>],
    c1: f64,
) -> (f64, Vec<f64>) {
    let l = vae.latent_dim;
    let inv_b = 1.0 / batch.len() as f64;
    let mut enc_acc = vec![0.0; vae.encoder.param_count()];
    let mut dec_acc = vec![0.0; vae.decoder.param_count()];
    let mut table_acc = vae.classes.as_ref().map(|c| vec![0.0; c.table().len()]);
    let mut scratch = Vec::new();
    let mut total = 0.0;

    for (i, x0) in batch.iter().enumerate() {
        let class = labels.map(|lbl| lbl[i]);
        let emb_row: Option<&[f64]> = match (&vae.classes, class) {
            (Some(emb), Some(c)) => Some(emb.row(c).expect("validated label")),
            _ => None,
        };
        let enc_in: &[f64] = emb_row.unwrap_or(x0);
        let (enc_out, enc_cache) = vae.encoder.forward_cached(enc_in);
        let mu = &enc_out[..l];
        let lraw = &enc_out[l..];

        let mut kl = 0.0;
        let mut z = Vec::with_capacity(l);
        let mut sigma = Vec::with_capacity(l);
        let mut clamped = Vec::with_capacity(l);
        for j in 0..l {
            let lc = lraw[j].clamp(-LOGVAR_BOUND, LOGVAR_BOUND);
            clamped.push(lc != lraw[j]);
            let v = lc.exp();
            let s = (0.5 * lc).exp();
            kl += 0.5 * (mu[j] * mu[j] + v - 1.0 - lc);
            sigma.push(s);
            z.push(mu[j] + s * xi[i][j]);
        }

        let mut dec_in = z.clone();
        if let Some(row) = emb_row {
            dec_in.extend_from_slice(row);
        }
        let (xhat, dec_cache) = vae.decoder.forward_cached(&dec_in);
        let recon: f64 = x0
            .iter()
            .zip(&xhat)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        total += kl + c1 * recon;

        // Reverse pass of (kl + c1 * recon) / batch size.
        let dec_upstream: Vec<f64> = x0
            .iter()
            .zip(&xhat)
            .map(|(&a, &b)| 2.0 * c1 * (b - a) * inv_b)
            .collect();
        let (dec_grads, dec_in_grad) = vae.decoder.backward(&dec_cache, &dec_upstream);
        scratch.clear();
        dec_grads.flatten_into(&mut scratch);
        add_scaled(&mut dec_acc, &scratch, 1.0);

        let mut enc_upstream = vec![0.0; 2 * l];
        for j in 0..l {
            let dz = dec_in_grad[j];
            enc_upstream[j] = mu[j] * inv_b + dz;
            enc_upstream[l + j] = if clamped[j] {
                0.0
            } else {
                0.5 * (lraw[j].exp() - 1.0) * inv_b + dz * xi[i][j] * sigma[j] * 0.5
            };
        }
        let (enc_grads, enc_in_grad) = vae.encoder.backward(&enc_cache, &enc_upstream);
        scratch.clear();
        enc_grads.flatten_into(&mut scratch);
        add_scaled(&mut enc_acc, &scratch, 1.0);

        if let (Some(acc), Some(emb), Some(c)) = (&mut table_acc, &vae.classes, class) {
            let dim = emb.dim();
            let row = &mut acc[c * dim..(c + 1) * dim];
            add_scaled(row, &dec_in_grad[l..], 1.0);
            add_scaled(row, &enc_in_grad, 1.0);
        }
    }

    let mut grads = enc_acc;
    grads.extend_from_slice(&dec_acc);
    if let Some(t) = table_acc {
        grads.extend_from_slice(&t);
    }
    (total * inv_b, grads)
}

/// Batch objective alone, for finite-difference cross-checks.
#[cfg(test)]
fn vae_loss(
    vae: &VaeParams,
    batch: &[&[f64]],
    labels: Option<&[usize]>,
    xi: &[Vec<f64>],
    c1: f64,
) -> f64 {
    let l = vae.latent_dim;
    let mut total = 0.0;
    for (i, x0) in batch.iter().enumerate() {
        let emb_row: Option<&[f64]> = match (&vae.classes, labels.map(|lbl| lbl[i])) {
            (Some(emb), Some(c)) => Some(emb.row(c).expect("validated label")),
            _ => None,
        };
        let enc_out = vae.encoder.forward(emb_row.unwrap_or(x0));
        let mut kl = 0.0;
        let mut dec_in = Vec::with_capacity(vae.decoder.in_dim());
        for j in 0..l {
            let mu = enc_out[j];
            let lc = enc_out[l + j].clamp(-LOGVAR_BOUND, LOGVAR_BOUND);
            kl += 0.5 * (mu * mu + lc.exp() - 1.0 - lc);
            dec_in.push(mu + (0.5 * lc).exp() * xi[i][j]);
        }
        if let Some(row) = emb_row {
            dec_in.extend_from_slice(row);
        }
        let xhat = vae.decoder.forward(&dec_in);
        let recon: f64 = x0
            .iter()
            .zip(&xhat)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        total += kl + c1 * recon;
    }
    total / batch.len() as f64
}

// ---------------------------------------------------------------------
// Oracle resampler
// ---------------------------------------------------------------------

/// Replays held training data with Gaussian jitter: the quality ceiling
/// among base generators.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSampler {
    data: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    by_class: Vec<Vec<usize>>,
    jitter: f64,
}

impl OracleSampler {
    /// `labels`, when present, makes the sampler conditional; every class
    /// in `0..=max` must own at least one datum. `jitter` is the standard
    /// deviation added per coordinate.
    pub fn new(
        data: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        jitter: f64,
    ) -> Result<Self, BaseGenError> {
        check_dataset(&data)?;
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(BaseGenError::BadParams("jitter must be finite and nonnegative"));
        }
        let by_class = match &labels {
            Some(l) => {
                if l.len() != data.len() {
                    return Err(BaseGenError::LabelMismatch {
                        expected: data.len(),
                        got: l.len(),
                    });
                }
                let count = l.iter().max().unwrap() + 1;
                let mut by_class = vec![Vec::new(); count];
                for (i, &c) in l.iter().enumerate() {
                    by_class[c].push(i);
                }
                if let Some(empty) = by_class.iter().position(|v| v.is_empty()) {
                    return Err(BaseGenError::EmptyClass { class: empty });
                }
                by_class
            }
            None => Vec::new(),
        };
        Ok(OracleSampler {
            data,
            labels,
            by_class,
            jitter,
        })
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn is_conditional(&self) -> bool {
        self.labels.is_some()
    }

    pub fn class_count(&self) -> Option<usize> {
        self.labels.as_ref().map(|_| self.by_class.len())
    }

    fn sample(&self, rng: &mut impl Rng, class: Option<usize>) -> Result<Vec<f64>, BaseGenError> {
        let idx = match (self.is_conditional(), class) {
            (false, None) => rng.random_range(0..self.data.len()),
            (true, Some(c)) => {
                let pool = self
                    .by_class
                    .get(c)
                    .ok_or(BaseGenError::ClassOutOfRange {
                        class: c,
                        count: self.by_class.len(),
                    })?;
                pool[rng.random_range(0..pool.len())]
            }
            (true, None) => return Err(BaseGenError::MissingLabel),
            (false, Some(_)) => return Err(BaseGenError::UnexpectedLabel),
        };
        Ok(self.data[idx]
            .iter()
            .map(|&v| {
                let xi: f64 = rng.sample(StandardNormal);
                v + self.jitter * xi
            })
            .collect())
    }
}

// ---------------------------------------------------------------------
// Unified front
// ---------------------------------------------------------------------

/// Any of the three base-generator kinds behind one sampling call.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseGenerator {
    /// One mixture (unconditional) or one per class (conditional).
    Gmm {
        models: Vec<GmmParams>,
        conditional: bool,
    },
    Vae(VaeParams),
    Oracle(OracleSampler),
}

impl BaseGenerator {
    pub fn gmm(params: GmmParams) -> Self {
        BaseGenerator::Gmm {
            models: vec![params],
            conditional: false,
        }
    }

    /// One mixture per class, all over the same data dimension.
    pub fn conditional_gmm(models: Vec<GmmParams>) -> Result<Self, BaseGenError> {
        if models.is_empty() {
            return Err(BaseGenError::BadParams("no class mixtures"));
        }
        let d = models[0].data_dim();
        if models.iter().any(|m| m.data_dim() != d) {
            return Err(BaseGenError::BadParams("class mixtures disagree on dimension"));
        }
        Ok(BaseGenerator::Gmm {
            models,
            conditional: true,
        })
    }

    pub fn vae(params: VaeParams) -> Self {
        BaseGenerator::Vae(params)
    }

    pub fn oracle(sampler: OracleSampler) -> Self {
        BaseGenerator::Oracle(sampler)
    }

    pub fn data_dim(&self) -> usize {
        match self {
            BaseGenerator::Gmm { models, .. } => models[0].data_dim(),
            BaseGenerator::Vae(v) => v.data_dim(),
            BaseGenerator::Oracle(o) => o.data[0].len(),
        }
    }

    pub fn is_conditional(&self) -> bool {
        match self {
            BaseGenerator::Gmm { conditional, .. } => *conditional,
            BaseGenerator::Vae(v) => v.is_conditional(),
            BaseGenerator::Oracle(o) => o.is_conditional(),
        }
    }

    pub fn class_count(&self) -> Option<usize> {
        match self {
            BaseGenerator::Gmm {
                models,
                conditional: true,
            } => Some(models.len()),
            BaseGenerator::Gmm { .. } => None,
            BaseGenerator::Vae(v) => v.classes().map(|c| c.count()),
            BaseGenerator::Oracle(o) => o.class_count(),
        }
    }

    /// Draws one clean proposal. Label presence must match the
    /// generator's conditional flag.
    pub fn generate(
        &self,
        rng: &mut impl Rng,
        class: Option<usize>,
    ) -> Result<Vec<f64>, BaseGenError> {
        match self {
            BaseGenerator::Gmm {
                models,
                conditional,
            } => match (conditional, class) {
                (false, None) => Ok(models[0].sample(rng)),
                (true, Some(c)) => models
                    .get(c)
                    .map(|m| m.sample(rng))
                    .ok_or(BaseGenError::ClassOutOfRange {
                        class: c,
                        count: models.len(),
                    }),
                (true, None) => Err(BaseGenError::MissingLabel),
                (false, Some(_)) => Err(BaseGenError::UnexpectedLabel),
            },
            BaseGenerator::Vae(v) => v.generate(rng, class),
            BaseGenerator::Oracle(o) => o.sample(rng, class),
        }
    }

    pub fn generate_many(
        &self,
        n: usize,
        rng: &mut impl Rng,
        class: Option<usize>,
    ) -> Result<Vec<Vec<f64>>, BaseGenError> {
        (0..n).map(|_| self.generate(rng, class)).collect()
    }
}

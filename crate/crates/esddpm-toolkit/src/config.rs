//! Run configuration: a flat `key = value` text format and the checks
//! that keep a run internally consistent.
//!
//! The format is one assignment per line, `#` lines and blank lines
//! ignored. Every key has a default, unknown and duplicate keys are
//! rejected, and `validate` enforces referential rules (the stop step
//! fits the schedule, the plan fits the stop step, conditional runs use
//! a labeled dataset). The output directory can be overridden by the
//! `ESDDPM_OUT_DIR` environment variable, and nothing else can.

use crate::dataset::{DatasetKind, DatasetSpec};
use esddpm_core::diffusion::SigmaMode;
use esddpm_core::metrics::MetricConfig;
use esddpm_core::sampler::PlanMode;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable that overrides `out_dir`.
pub const OUT_DIR_ENV: &str = "ESDDPM_OUT_DIR";

/// Configuration loading and validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: &'static str },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("key `{key}`: {reason}")]
    BadValue { key: &'static str, reason: String },
    #[error("key `{field}`: {reason}")]
    Inconsistent {
        field: &'static str,
        reason: &'static str,
    },
}

/// Which base generator a run fits and samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorChoice {
    Gmm,
    Vae,
    Oracle,
}

impl GeneratorChoice {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorChoice::Gmm => "gmm",
            GeneratorChoice::Vae => "vae",
            GeneratorChoice::Oracle => "oracle",
        }
    }
}

impl fmt::Display for GeneratorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One run, fully specified. See the key table in `RunConfig::parse`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Stop step: the trained horizon of the denoiser.
    pub t_prime: usize,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub sigma_mode: SigmaMode,
    pub train_iters: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub generator: GeneratorChoice,
    pub gmm_components: usize,
    pub gmm_em_iters: usize,
    pub vae_latent_dim: usize,
    pub vae_iters: usize,
    pub oracle_jitter: f64,
    /// Class-conditional run; requires a labeled dataset.
    pub conditional: bool,
    /// Respaced plan length; 0 means the dense plan.
    pub plan_steps: usize,
    pub plan_mode: PlanMode,
    pub eta: f64,
    pub sample_count: usize,
    pub metric_k: usize,
    pub metric_projections: usize,
    /// Permutation count for the two-sample test; 0 skips it.
    pub metric_perms: usize,
    /// Kernel bandwidth; 0 means the median heuristic.
    pub mmd_bandwidth: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::new(DatasetKind::TwoMoons, 1000),
            t_max: 400,
            beta_start: 1e-4,
            beta_end: 0.02,
            t_prime: 100,
            hidden: vec![64, 64],
            time_dim: 32,
            sigma_mode: SigmaMode::BetaTilde,
            train_iters: 4000,
            batch_size: 128,
            learning_rate: 1e-3,
            generator: GeneratorChoice::Gmm,
            gmm_components: 8,
            gmm_em_iters: 200,
            vae_latent_dim: 2,
            vae_iters: 3000,
            oracle_jitter: 0.0,
            conditional: false,
            plan_steps: 0,
            plan_mode: PlanMode::Ancestral,
            eta: 0.0,
            sample_count: 1000,
            metric_k: 5,
            metric_projections: 128,
            metric_perms: 0,
            mmd_bandwidth: 0.0,
            seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                reason: "expected `key = value`",
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                reason: "empty key",
            });
        }
        if pairs.insert(key.clone(), (line, value)).is_some() {
            return Err(ConfigError::DuplicateKey { line, key });
        }
    }
    Ok(pairs)
}

type Pairs = BTreeMap<String, (usize, String)>;

fn take(pairs: &mut Pairs, key: &'static str) -> Option<String> {
    pairs.remove(key).map(|(_, v)| v)
}

fn bad(key: &'static str, value: &str, want: &str) -> ConfigError {
    ConfigError::BadValue {
        key,
        reason: format!("`{value}` is not {want}"),
    }
}

fn take_usize(pairs: &mut Pairs, key: &'static str, into: &mut usize) -> Result<(), ConfigError> {
    if let Some(v) = take(pairs, key) {
        *into = v.parse().map_err(|_| bad(key, &v, "a nonnegative integer"))?;
    }
    Ok(())
}

fn take_u64(pairs: &mut Pairs, key: &'static str, into: &mut u64) -> Result<(), ConfigError> {
    if let Some(v) = take(pairs, key) {
        *into = v.parse().map_err(|_| bad(key, &v, "a nonnegative integer"))?;
    }
    Ok(())
}

fn take_f64(pairs: &mut Pairs, key: &'static str, into: &mut f64) -> Result<(), ConfigError> {
    if let Some(v) = take(pairs, key) {
        *into = v.parse().map_err(|_| bad(key, &v, "a number"))?;
    }
    Ok(())
}

fn take_bool(pairs: &mut Pairs, key: &'static str, into: &mut bool) -> Result<(), ConfigError> {
    if let Some(v) = take(pairs, key) {
        *into = match v.as_str() {
            "true" => true,
            "false" => false,
            _ => return Err(bad(key, &v, "`true` or `false`")),
        };
    }
    Ok(())
}

impl RunConfig {
    /// Parses a flat `key = value` document. Every key is optional and
    /// falls back to the default; unknown keys are errors. Keys:
    /// `dataset`, `dataset_size`, `dataset_noise`, `dataset_seed`,
    /// `dataset_modes`, `t_max`, `beta_start`, `beta_end`, `t_prime`,
    /// `hidden`, `time_dim`, `sigma_mode`, `train_iters`, `batch_size`,
    /// `learning_rate`, `generator`, `gmm_components`, `gmm_em_iters`,
    /// `vae_latent_dim`, `vae_iters`, `oracle_jitter`, `conditional`,
    /// `plan_steps`, `plan_mode`, `eta`, `sample_count`, `metric_k`,
    /// `metric_projections`, `metric_perms`, `mmd_bandwidth`, `seed`,
    /// `out_dir`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = parse_pairs(text)?;
        let mut cfg = RunConfig::default();

        if let Some(v) = take(&mut pairs, "dataset") {
            cfg.dataset.kind =
                DatasetKind::parse(&v).ok_or_else(|| bad("dataset", &v, "a dataset kind"))?;
        }
        take_usize(&mut pairs, "dataset_size", &mut cfg.dataset.size)?;
        take_f64(&mut pairs, "dataset_noise", &mut cfg.dataset.noise)?;
        take_u64(&mut pairs, "dataset_seed", &mut cfg.dataset.seed)?;
        take_usize(&mut pairs, "dataset_modes", &mut cfg.dataset.modes)?;
        take_usize(&mut pairs, "t_max", &mut cfg.t_max)?;
        take_f64(&mut pairs, "beta_start", &mut cfg.beta_start)?;
        take_f64(&mut pairs, "beta_end", &mut cfg.beta_end)?;
        take_usize(&mut pairs, "t_prime", &mut cfg.t_prime)?;
        if let Some(v) = take(&mut pairs, "hidden") {
            cfg.hidden = if v == "none" {
                Vec::new()
            } else {
                v.split(',')
                    .map(|w| {
                        let width: usize = w
                            .trim()
                            .parse()
                            .map_err(|_| bad("hidden", &v, "a comma list of widths"))?;
                        if width == 0 {
                            return Err(bad("hidden", &v, "a list of positive widths"));
                        }
                        Ok(width)
                    })
                    .collect::<Result<_, _>>()?
            };
        }
        take_usize(&mut pairs, "time_dim", &mut cfg.time_dim)?;
        if let Some(v) = take(&mut pairs, "sigma_mode") {
            cfg.sigma_mode = match v.as_str() {
                "beta" => SigmaMode::Beta,
                "beta_tilde" => SigmaMode::BetaTilde,
                _ => return Err(bad("sigma_mode", &v, "`beta` or `beta_tilde`")),
            };
        }
        take_usize(&mut pairs, "train_iters", &mut cfg.train_iters)?;
        take_usize(&mut pairs, "batch_size", &mut cfg.batch_size)?;
        take_f64(&mut pairs, "learning_rate", &mut cfg.learning_rate)?;
        if let Some(v) = take(&mut pairs, "generator") {
            cfg.generator = match v.as_str() {
                "gmm" => GeneratorChoice::Gmm,
                "vae" => GeneratorChoice::Vae,
                "oracle" => GeneratorChoice::Oracle,
                _ => return Err(bad("generator", &v, "`gmm`, `vae`, or `oracle`")),
            };
        }
        take_usize(&mut pairs, "gmm_components", &mut cfg.gmm_components)?;
        take_usize(&mut pairs, "gmm_em_iters", &mut cfg.gmm_em_iters)?;
        take_usize(&mut pairs, "vae_latent_dim", &mut cfg.vae_latent_dim)?;
        take_usize(&mut pairs, "vae_iters", &mut cfg.vae_iters)?;
        take_f64(&mut pairs, "oracle_jitter", &mut cfg.oracle_jitter)?;
        take_bool(&mut pairs, "conditional", &mut cfg.conditional)?;
        take_usize(&mut pairs, "plan_steps", &mut cfg.plan_steps)?;
        if let Some(v) = take(&mut pairs, "plan_mode") {
            cfg.plan_mode = match v.as_str() {
                "ancestral" => PlanMode::Ancestral,
                "ddim" => PlanMode::Ddim,
                _ => return Err(bad("plan_mode", &v, "`ancestral` or `ddim`")),
            };
        }
        take_f64(&mut pairs, "eta", &mut cfg.eta)?;
        take_usize(&mut pairs, "sample_count", &mut cfg.sample_count)?;
        take_usize(&mut pairs, "metric_k", &mut cfg.metric_k)?;
        take_usize(&mut pairs, "metric_projections", &mut cfg.metric_projections)?;
        take_usize(&mut pairs, "metric_perms", &mut cfg.metric_perms)?;
        take_f64(&mut pairs, "mmd_bandwidth", &mut cfg.mmd_bandwidth)?;
        take_u64(&mut pairs, "seed", &mut cfg.seed)?;
        if let Some(v) = take(&mut pairs, "out_dir") {
            if v.is_empty() {
                return Err(bad("out_dir", &v, "a nonempty path"));
            }
            cfg.out_dir = PathBuf::from(v);
        }

        if let Some((key, (line, _))) = pairs.into_iter().next() {
            return Err(ConfigError::UnknownKey { line, key });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config file, then applies the output-directory
    /// environment override.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.out_dir = PathBuf::from(dir);
            }
        }
        Ok(cfg)
    }

    /// Checks every cross-field rule. `parse` calls this; callers that
    /// mutate a config afterwards should call it again.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn fail(field: &'static str, reason: &'static str) -> Result<(), ConfigError> {
            Err(ConfigError::Inconsistent { field, reason })
        }
        if self.dataset.size == 0 {
            return fail("dataset_size", "must be positive");
        }
        if !(self.dataset.noise >= 0.0 && self.dataset.noise.is_finite()) {
            return fail("dataset_noise", "must be finite and nonnegative");
        }
        let ring = matches!(
            self.dataset.kind,
            DatasetKind::GaussianRing | DatasetKind::ClassRing
        );
        if ring && self.dataset.modes == 0 {
            return fail("dataset_modes", "ring datasets need at least one mode");
        }
        if self.t_max == 0 {
            return fail("t_max", "must be positive");
        }
        if !(self.beta_start > 0.0 && self.beta_start < 1.0) {
            return fail("beta_start", "must lie strictly between 0 and 1");
        }
        if !(self.beta_end >= self.beta_start && self.beta_end < 1.0) {
            return fail("beta_end", "must lie in [beta_start, 1)");
        }
        if self.t_prime > self.t_max {
            return fail("t_prime", "stop step cannot exceed the schedule horizon");
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return fail("time_dim", "must be a positive even number");
        }
        if self.train_iters == 0 {
            return fail("train_iters", "must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive and finite");
        }
        match self.generator {
            GeneratorChoice::Gmm => {
                if self.gmm_components == 0 {
                    return fail("gmm_components", "must be positive");
                }
                if self.gmm_components > self.dataset.size {
                    return fail("gmm_components", "cannot exceed the dataset size");
                }
                if self.gmm_em_iters == 0 {
                    return fail("gmm_em_iters", "must be positive");
                }
            }
            GeneratorChoice::Vae => {
                if self.vae_latent_dim == 0 {
                    return fail("vae_latent_dim", "must be positive");
                }
                if self.vae_iters == 0 {
                    return fail("vae_iters", "must be positive");
                }
                if self.t_prime == 0 {
                    return fail(
                        "t_prime",
                        "the latent base needs a positive stop step for its reconstruction weight",
                    );
                }
            }
            GeneratorChoice::Oracle => {
                if !(self.oracle_jitter >= 0.0 && self.oracle_jitter.is_finite()) {
                    return fail("oracle_jitter", "must be finite and nonnegative");
                }
            }
        }
        if self.conditional {
            if !self.dataset.kind.labeled() {
                return fail("conditional", "requires a labeled dataset kind");
            }
            if self.dataset.modes < 2 {
                return fail("dataset_modes", "conditional runs need at least two classes");
            }
        }
        if self.plan_steps > self.t_prime {
            return fail("plan_steps", "plan cannot be longer than the stop step");
        }
        if self.plan_steps == 1 && self.t_prime > 1 {
            return fail(
                "plan_steps",
                "a respaced plan must keep both endpoints; use at least 2 steps",
            );
        }
        if !(self.eta >= 0.0 && self.eta <= 1.0) {
            return fail("eta", "must lie in [0, 1]");
        }
        if self.eta > 0.0 && self.plan_mode != PlanMode::Ddim {
            return fail("eta", "only the ddim plan mode uses eta");
        }
        if self.sample_count == 0 {
            return fail("sample_count", "must be positive");
        }
        if self.metric_k == 0 {
            return fail("metric_k", "must be positive");
        }
        if self.metric_projections == 0 {
            return fail("metric_projections", "must be positive");
        }
        if !(self.mmd_bandwidth >= 0.0 && self.mmd_bandwidth.is_finite()) {
            return fail("mmd_bandwidth", "must be finite and nonnegative");
        }
        if self.out_dir.as_os_str().is_empty() {
            return fail("out_dir", "must be a nonempty path");
        }
        Ok(())
    }

    /// The metric knobs in the form the evaluator takes.
    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            k: self.metric_k,
            n_projections: self.metric_projections,
            n_perms: (self.metric_perms > 0).then_some(self.metric_perms),
            mmd_bandwidth: (self.mmd_bandwidth > 0.0).then_some(self.mmd_bandwidth),
        }
    }
}

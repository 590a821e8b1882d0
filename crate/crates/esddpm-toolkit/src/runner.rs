//! Command orchestration: every CLI subcommand as a library function,
//! each a pure function of (config, seed) on a single thread.
//!
//! Machine-readable CSV goes to the writer the caller hands in (the CLI
//! passes standard output); human progress lines go to standard error.
//! Artifacts (checkpoints, sample dumps, plots) land in the config's
//! output directory.

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use crate::config::{ConfigError, GeneratorChoice, RunConfig};
use crate::dataset::{make_dataset, Dataset, DatasetError};
use crate::plot::{pgm_montage, scatter_svg, PlotError, ScatterSet};
use crate::report::{
    write_loss_trace, write_metric_rows, write_samples, ReportError, RunMeta,
};
use esddpm_core::basegen::{fit_gmm, train_vae, BaseGenError, BaseGenerator, OracleSampler, VaeConfig};
use esddpm_core::diffusion::{
    CountingPredictor, DiffusionError, DiffusionModel, TrainConfig, Trainer,
};
use esddpm_core::metrics::{
    evaluate, gaussian_kde_log_density, silverman_bandwidth, MetricsError,
};
use esddpm_core::nn::{Network, NetworkConfig, NnError};
use esddpm_core::sampler::{edit_and_refine, es_sample, EditRequest, SamplerError, SamplerPlan};
use esddpm_core::schedule::{NoiseSchedule, ScheduleError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Any failure a command can hit.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
    #[error("plot: {0}")]
    Plot(#[from] PlotError),
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("diffusion: {0}")]
    Diffusion(#[from] DiffusionError),
    #[error("base generator: {0}")]
    Base(#[from] BaseGenError),
    #[error("sampler: {0}")]
    Sampler(#[from] SamplerError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

impl RunError {
    /// True when the failure is a configuration problem (exit code 3)
    /// rather than a runtime one (exit code 1).
    pub fn is_config(&self) -> bool {
        matches!(self, RunError::Config(_))
    }
}

fn inconsistent(field: &'static str, reason: &'static str) -> RunError {
    RunError::Config(ConfigError::Inconsistent { field, reason })
}

// ---------------------------------------------------------------------
// Shared building blocks
// ---------------------------------------------------------------------

/// The schedule a config describes.
pub fn build_schedule(cfg: &RunConfig) -> Result<NoiseSchedule, RunError> {
    Ok(NoiseSchedule::linear(cfg.t_max, cfg.beta_start, cfg.beta_end)?)
}

/// Class count of a conditional run, `None` otherwise.
pub fn class_count(cfg: &RunConfig) -> Option<usize> {
    cfg.conditional.then_some(cfg.dataset.modes)
}

/// A fresh (untrained) noise predictor per the config.
pub fn build_network(cfg: &RunConfig, rng: &mut impl Rng) -> Result<Network, RunError> {
    let mut net_cfg = NetworkConfig::new(cfg.dataset.kind.dim(), cfg.t_max)
        .with_hidden(cfg.hidden.clone());
    net_cfg.time_dim = cfg.time_dim;
    if let Some(count) = class_count(cfg) {
        net_cfg = net_cfg.with_classes(count);
    }
    Ok(Network::new(&net_cfg, rng)?)
}

/// Fits the configured base generator. Returns the generator and a
/// scalar fit score (final log-likelihood or final loss; 0 for the
/// oracle, which has nothing to fit).
pub fn fit_base(
    cfg: &RunConfig,
    data: &Dataset,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(BaseGenerator, f64), RunError> {
    match cfg.generator {
        GeneratorChoice::Gmm => {
            if let Some(count) = class_count(cfg) {
                let labels = data
                    .labels
                    .as_ref()
                    .ok_or_else(|| inconsistent("conditional", "dataset has no labels"))?;
                let mut models = Vec::with_capacity(count);
                let mut score = 0.0;
                for c in 0..count {
                    let class_points: Vec<Vec<f64>> = data
                        .points
                        .iter()
                        .zip(labels)
                        .filter(|(_, &l)| l == c)
                        .map(|(p, _)| p.clone())
                        .collect();
                    let fit = fit_gmm(&class_points, cfg.gmm_components, cfg.gmm_em_iters, rng)?;
                    score += fit.log_likelihood.last().copied().unwrap_or(f64::NAN);
                    models.push(fit.params);
                }
                Ok((
                    BaseGenerator::conditional_gmm(models)?,
                    score / count as f64,
                ))
            } else {
                let fit = fit_gmm(&data.points, cfg.gmm_components, cfg.gmm_em_iters, rng)?;
                let score = fit.log_likelihood.last().copied().unwrap_or(f64::NAN);
                Ok((BaseGenerator::gmm(fit.params), score))
            }
        }
        GeneratorChoice::Vae => {
            let mut vae_cfg = VaeConfig::new(cfg.vae_latent_dim, cfg.t_prime);
            vae_cfg.iterations = cfg.vae_iters;
            vae_cfg.batch_size = cfg.batch_size;
            vae_cfg.learning_rate = cfg.learning_rate;
            if let Some(count) = class_count(cfg) {
                vae_cfg = vae_cfg.with_classes(count);
            }
            let labels = if cfg.conditional {
                data.labels.as_deref()
            } else {
                None
            };
            let fit = train_vae(&data.points, labels, schedule, &vae_cfg, rng)?;
            let score = fit.loss.last().copied().unwrap_or(f64::NAN);
            Ok((BaseGenerator::vae(fit.params), score))
        }
        GeneratorChoice::Oracle => {
            let labels = if cfg.conditional {
                data.labels.clone()
            } else {
                None
            };
            let oracle = OracleSampler::new(data.points.clone(), labels, cfg.oracle_jitter)?;
            Ok((BaseGenerator::oracle(oracle), 0.0))
        }
    }
}

/// The sampling plan for stop step `t_prime` with `plan_steps` respaced
/// steps (0 keeps the dense plan).
pub fn build_plan(
    cfg: &RunConfig,
    t_prime: usize,
    plan_steps: usize,
) -> Result<SamplerPlan, RunError> {
    let plan = if plan_steps == 0 || plan_steps == t_prime {
        let mut plan = SamplerPlan::full(t_prime, cfg.plan_mode);
        if cfg.eta > 0.0 {
            // A dense plan with nonzero stochasticity in the jump rule.
            plan = SamplerPlan::uniform(t_prime, t_prime, cfg.plan_mode, cfg.eta)?;
        }
        plan
    } else {
        SamplerPlan::uniform(t_prime, plan_steps, cfg.plan_mode, cfg.eta)?
    };
    Ok(plan)
}

/// Draws `n` samples with one RNG stream per sample, so the result is
/// invariant to how the work would be split across workers.
pub fn sample_worker_invariant<P: esddpm_core::diffusion::NoisePredictor>(
    model: &DiffusionModel<P>,
    generator: &BaseGenerator,
    plan: &SamplerPlan,
    n: usize,
    class: Option<usize>,
    seed: u64,
) -> Result<Vec<Vec<f64>>, RunError> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut one = es_sample(model, generator, plan, 1, class, &mut rng)?;
        out.push(one.pop().expect("one sample requested"));
    }
    Ok(out)
}

/// Samples `n` draws, cycling the classes of a conditional run evenly.
/// Returns the samples and their classes (None for unconditional runs).
#[allow(clippy::type_complexity)]
pub fn generate_samples<P: esddpm_core::diffusion::NoisePredictor>(
    model: &DiffusionModel<P>,
    generator: &BaseGenerator,
    plan: &SamplerPlan,
    n: usize,
    classes: Option<usize>,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Option<Vec<usize>>), RunError> {
    match classes {
        None => Ok((
            sample_worker_invariant(model, generator, plan, n, None, seed)?,
            None,
        )),
        Some(count) => {
            let mut samples = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for c in 0..count {
                let share = n / count + usize::from(c < n % count);
                // Offset the seed per class so streams never collide.
                let chunk = sample_worker_invariant(
                    model,
                    generator,
                    plan,
                    share,
                    Some(c),
                    seed.wrapping_add(1 + c as u64),
                )?;
                labels.extend(std::iter::repeat_n(c, chunk.len()));
                samples.extend(chunk);
            }
            Ok((samples, Some(labels)))
        }
    }
}

fn model_path(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("model.ckpt"))
}

fn base_path(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("base.ckpt"))
}

fn load_model(cfg: &RunConfig, flag: Option<&Path>) -> Result<DiffusionModel<Network>, RunError> {
    let path = model_path(cfg, flag);
    if !path.exists() && cfg.t_prime == 0 {
        // A base-only run never evaluates the denoiser; a fresh throwaway
        // model satisfies the sampling interface without a checkpoint.
        eprintln!("sample: no model checkpoint; using an untrained stand-in for the base-only plan");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = build_network(cfg, &mut rng)?;
        let schedule = build_schedule(cfg)?;
        let horizon = schedule.horizon();
        return Ok(DiffusionModel::new(net, schedule, horizon, cfg.sigma_mode)?);
    }
    Ok(load_checkpoint(&path)?.diffusion_model()?)
}

fn load_base(cfg: &RunConfig, flag: Option<&Path>) -> Result<BaseGenerator, RunError> {
    let path = base_path(cfg, flag);
    let ckpt = load_checkpoint(&path)?;
    ckpt.generator.ok_or(RunError::Checkpoint(
        CheckpointError::MissingSection {
            section: "generator",
        },
    ))
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), RunError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn emit_sample_plot(
    cfg: &RunConfig,
    data: Option<&Dataset>,
    samples: &[Vec<f64>],
) -> Result<PathBuf, RunError> {
    if cfg.dataset.kind.dim() == 2 {
        let path = cfg.out_dir.join("samples.svg");
        let mut sets = Vec::new();
        if let Some(d) = data {
            sets.push(ScatterSet {
                points: &d.points,
                color: "#bbbbbb",
            });
        }
        sets.push(ScatterSet {
            points: samples,
            color: "#1f77b4",
        });
        scatter_svg(&sets, &path)?;
        Ok(path)
    } else {
        let path = cfg.out_dir.join("samples.pgm");
        let shown = samples.len().min(64);
        pgm_montage(&samples[..shown], 8, &path)?;
        Ok(path)
    }
}

// ---------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------

/// `fit-base`: fit the configured base generator and checkpoint it.
pub fn cmd_fit_base(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), RunError> {
    let data = make_dataset(&cfg.dataset)?;
    let schedule = build_schedule(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eprintln!(
        "fit-base: {} on {} ({} points, seed {})",
        cfg.generator,
        cfg.dataset.kind,
        data.points.len(),
        cfg.seed
    );
    let (generator, score) = fit_base(cfg, &data, &schedule, &mut rng)?;
    ensure_out_dir(cfg)?;
    let path = base_path(cfg, None);
    let ckpt = Checkpoint {
        schedule: Some(schedule),
        generator: Some(generator),
        ..Checkpoint::default()
    };
    save_checkpoint(&path, &ckpt)?;
    eprintln!("fit-base: wrote {}", path.display());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["generator", "dataset", "train_size", "seed", "score"])
        .map_err(ReportError::from)?;
    w.write_record([
        cfg.generator.name().to_string(),
        cfg.dataset.kind.to_string(),
        data.points.len().to_string(),
        cfg.seed.to_string(),
        format!("{score}"),
    ])
    .map_err(ReportError::from)?;
    w.flush().map_err(ReportError::from)?;
    Ok(())
}

/// `train-diffusion`: train the denoiser on the first `t_prime` steps
/// and checkpoint model plus optimizer state.
pub fn cmd_train_diffusion(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), RunError> {
    if cfg.t_prime == 0 {
        return Err(inconsistent("t_prime", "training needs a positive stop step"));
    }
    let data = make_dataset(&cfg.dataset)?;
    let schedule = build_schedule(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = build_network(cfg, &mut rng)?;
    let model = DiffusionModel::new(net, schedule, cfg.t_prime, cfg.sigma_mode)?;
    let train_cfg = TrainConfig {
        iterations: cfg.train_iters,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
    };
    let labels = if cfg.conditional {
        data.labels.as_deref()
    } else {
        None
    };
    eprintln!(
        "train-diffusion: stop step {} of {}, {} iterations (seed {})",
        cfg.t_prime, cfg.t_max, cfg.train_iters, cfg.seed
    );
    let mut trainer = Trainer::new(model, train_cfg)?;
    let mut losses = Vec::with_capacity(cfg.train_iters);
    let report_every = (cfg.train_iters / 10).max(1);
    for i in 0..cfg.train_iters {
        losses.push(trainer.step(&data.points, labels)?);
        if (i + 1) % report_every == 0 || i + 1 == cfg.train_iters {
            eprintln!("train-diffusion: iteration {} loss {:.6}", i + 1, losses[i]);
        }
    }
    ensure_out_dir(cfg)?;
    let mut ckpt = Checkpoint::from_model(&trainer.model);
    ckpt.trainer = Some(trainer.state());
    let path = model_path(cfg, None);
    save_checkpoint(&path, &ckpt)?;
    eprintln!("train-diffusion: wrote {}", path.display());
    write_loss_trace(out, &losses, 50)?;
    Ok(())
}

/// Options the `sample` command takes beyond the config.
#[derive(Debug, Clone, Default)]
pub struct SampleOpts {
    pub count: Option<usize>,
    pub plan_steps: Option<usize>,
    pub model: Option<PathBuf>,
    pub base: Option<PathBuf>,
}

/// `sample`: draw from the combined sampler and dump samples as CSV
/// (stdout and `samples.csv`) plus a plot.
pub fn cmd_sample(cfg: &RunConfig, opts: &SampleOpts, out: &mut dyn Write) -> Result<(), RunError> {
    let model = load_model(cfg, opts.model.as_deref())?;
    let generator = load_base(cfg, opts.base.as_deref())?;
    let plan_steps = opts.plan_steps.unwrap_or(cfg.plan_steps);
    let plan = build_plan(cfg, cfg.t_prime, plan_steps)?;
    let n = opts.count.unwrap_or(cfg.sample_count);
    // Count denoiser evaluations through a wrapper so the cost per
    // sample is visible in the log.
    let counted = model.with_net(CountingPredictor::new(&model.net));
    eprintln!(
        "sample: {} draws, stop step {}, plan length {} (seed {})",
        n,
        plan.t_prime(),
        plan.len(),
        cfg.seed
    );
    let (samples, sample_classes) =
        generate_samples(&counted, &generator, &plan, n, class_count(cfg), cfg.seed)?;
    let per_sample = if n == 0 { 0 } else { counted.net.count() as usize / n };
    eprintln!("sample: {per_sample} network evaluations per sample");
    ensure_out_dir(cfg)?;
    let mut buf = Vec::new();
    write_samples(&mut buf, &samples, sample_classes.as_deref())?;
    std::fs::write(cfg.out_dir.join("samples.csv"), &buf)?;
    out.write_all(&buf)?;
    let data = make_dataset(&cfg.dataset)?;
    let plot = emit_sample_plot(cfg, Some(&data), &samples)?;
    eprintln!("sample: wrote {}", plot.display());
    Ok(())
}

/// `sweep`: evaluate the combined sampler at several stop steps and
/// emit one metric row per stop step.
pub fn cmd_sweep(cfg: &RunConfig, tprimes: &[usize], out: &mut dyn Write) -> Result<(), RunError> {
    if tprimes.is_empty() {
        return Err(RunError::Invalid("sweep needs at least one stop step".into()));
    }
    let model = load_model(cfg, None)?;
    let generator = load_base(cfg, None)?;
    let data = make_dataset(&cfg.dataset)?;
    let metric_cfg = cfg.metric_config();
    let mut rows = Vec::with_capacity(tprimes.len());
    for (i, &t_prime) in tprimes.iter().enumerate() {
        let plan = build_plan(cfg, t_prime, 0)?;
        let (samples, _) = generate_samples(
            &model,
            &generator,
            &plan,
            cfg.sample_count,
            class_count(cfg),
            cfg.seed.wrapping_add((i as u64) << 32),
        )?;
        let mut metric_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let report = evaluate(&samples, &data.points, &metric_cfg, &mut metric_rng)?;
        eprintln!(
            "sweep: stop step {t_prime} -> energy {:.4}, recall {:.3}",
            report.energy_distance, report.knn_recall
        );
        rows.push((
            RunMeta {
                dataset: cfg.dataset.kind.to_string(),
                generator: cfg.generator.name().to_string(),
                t_prime,
                plan_len: plan.len(),
                seed: cfg.seed,
            },
            report,
        ));
    }
    write_metric_rows(out, &rows)?;
    Ok(())
}

/// `evaluate`: score a sample dump against the configured dataset.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    samples_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), RunError> {
    let path = samples_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("samples.csv"));
    let samples = crate::report::read_samples(&path)?;
    let data = make_dataset(&cfg.dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let report = evaluate(&samples, &data.points, &cfg.metric_config(), &mut rng)?;
    eprintln!(
        "evaluate: {} samples vs {} reference points -> energy {:.4}",
        samples.len(),
        data.points.len(),
        report.energy_distance
    );
    let meta = RunMeta {
        dataset: cfg.dataset.kind.to_string(),
        generator: cfg.generator.name().to_string(),
        t_prime: cfg.t_prime,
        plan_len: cfg.plan_steps,
        seed: cfg.seed,
    };
    write_metric_rows(out, &[(meta, report)])?;
    Ok(())
}

/// Options the `edit` command takes beyond the config.
#[derive(Debug, Clone, Default)]
pub struct EditOpts {
    pub trials: Option<usize>,
    pub horizon: Option<usize>,
    pub model: Option<PathBuf>,
}

/// `edit`: pull data points off the manifold, refine them through a
/// short noising/denoising round trip, and report a kernel-density
/// score before and after each trial.
pub fn cmd_edit(cfg: &RunConfig, opts: &EditOpts, out: &mut dyn Write) -> Result<(), RunError> {
    if cfg.dataset.kind.dim() != 2 {
        return Err(RunError::Invalid(
            "edit demo runs on the 2-D dataset kinds".into(),
        ));
    }
    let model = load_model(cfg, opts.model.as_deref())?;
    let data = make_dataset(&cfg.dataset)?;
    let trials = opts.trials.unwrap_or(100);
    let horizon = opts.horizon.unwrap_or((cfg.t_prime / 2).max(1));
    if horizon < 1 || horizon > model.trained_horizon() {
        return Err(RunError::Invalid(format!(
            "edit horizon {horizon} is outside the trained range 1..={}",
            model.trained_horizon()
        )));
    }
    // Score edits against a kernel density over the data. The plug-in
    // rule is derived for near-Gaussian clouds and keys on the cloud's
    // extent; these datasets concentrate on thin curves, so halving it
    // keeps the density from blurring across the gaps the edits sit in.
    let bandwidth = 0.5 * silverman_bandwidth(&data.points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut improved = 0usize;
    let mut before_pts = Vec::with_capacity(trials);
    let mut after_pts = Vec::with_capacity(trials);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "score_before", "score_after", "improved"])
        .map_err(ReportError::from)?;
    // Every built-in 2-D kind leaves the center of its cloud empty, so
    // pulling a point to a small ring around the mean is guaranteed to
    // leave the manifold.
    let dim = data.points[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| data.points.iter().map(|p| p[j]).sum::<f64>() / data.points.len() as f64)
        .collect();
    for trial in 0..trials {
        let base = &data.points[rng.random_range(0..data.points.len())];
        let offset: Vec<f64> = base.iter().zip(&mean).map(|(v, m)| v - m).collect();
        let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let replacement: Vec<f64> = mean
            .iter()
            .zip(&offset)
            .map(|(m, o)| m + 0.12 * o / norm)
            .collect();
        let request = EditRequest::new(
            base.clone(),
            vec![true; base.len()],
            replacement,
            horizon,
        )?;
        let edited = request.edited();
        let refined = edit_and_refine(&model, &request, None, &mut rng)?;
        let score_before = gaussian_kde_log_density(&data.points, &edited, bandwidth)?;
        let score_after = gaussian_kde_log_density(&data.points, &refined, bandwidth)?;
        let is_better = score_after > score_before;
        improved += usize::from(is_better);
        w.write_record([
            trial.to_string(),
            format!("{score_before}"),
            format!("{score_after}"),
            is_better.to_string(),
        ])
        .map_err(ReportError::from)?;
        before_pts.push(edited);
        after_pts.push(refined);
    }
    w.flush().map_err(ReportError::from)?;
    eprintln!(
        "edit: density score improved in {improved}/{trials} trials (refine horizon {horizon})"
    );
    ensure_out_dir(cfg)?;
    let path = cfg.out_dir.join("edit.svg");
    scatter_svg(
        &[
            ScatterSet {
                points: &data.points,
                color: "#cccccc",
            },
            ScatterSet {
                points: &before_pts,
                color: "crimson",
            },
            ScatterSet {
                points: &after_pts,
                color: "#2ca02c",
            },
        ],
        &path,
    )?;
    eprintln!("edit: wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetKind;

    fn tiny_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.dataset.size = 64;
        cfg.dataset.seed = 5;
        cfg.t_max = 20;
        cfg.t_prime = 10;
        cfg.hidden = vec![8];
        cfg.time_dim = 4;
        cfg.train_iters = 30;
        cfg.batch_size = 16;
        cfg.gmm_components = 2;
        cfg.gmm_em_iters = 20;
        cfg.sample_count = 12;
        cfg.metric_k = 2;
        cfg.metric_projections = 8;
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn fit_train_sample_evaluate_pipeline_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let mut sink = Vec::new();
        cmd_fit_base(&cfg, &mut sink).unwrap();
        assert!(dir.path().join("base.ckpt").exists());
        sink.clear();
        cmd_train_diffusion(&cfg, &mut sink).unwrap();
        assert!(dir.path().join("model.ckpt").exists());
        sink.clear();
        cmd_sample(&cfg, &SampleOpts::default(), &mut sink).unwrap();
        let text = String::from_utf8(sink.clone()).unwrap();
        assert!(text.starts_with("x0,x1"));
        assert_eq!(text.lines().count(), 1 + cfg.sample_count);
        assert!(dir.path().join("samples.csv").exists());
        assert!(dir.path().join("samples.svg").exists());
        sink.clear();
        cmd_evaluate(&cfg, None, &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn sampling_is_invariant_to_worker_split() {
        // Drawing per-sample RNG streams means chunked "workers" agree
        // with a single worker sample for sample.
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let data = make_dataset(&cfg.dataset).unwrap();
        let schedule = build_schedule(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (generator, _) = fit_base(&cfg, &data, &schedule, &mut rng).unwrap();
        let net = build_network(&cfg, &mut rng).unwrap();
        let model =
            DiffusionModel::new(net, schedule, cfg.t_prime, cfg.sigma_mode).unwrap();
        let plan = build_plan(&cfg, cfg.t_prime, 0).unwrap();
        let whole =
            sample_worker_invariant(&model, &generator, &plan, 9, None, 77).unwrap();
        // "Three workers" each draw a disjoint index range.
        let mut chunked = Vec::new();
        for worker in 0..3 {
            for i in (worker * 3)..(worker * 3 + 3) {
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                rng.set_stream(i as u64);
                let one = es_sample(&model, &generator, &plan, 1, None, &mut rng).unwrap();
                chunked.push(one.into_iter().next().unwrap());
            }
        }
        assert_eq!(whole, chunked);
    }

    #[test]
    fn sweep_emits_exactly_one_row_per_stop_step() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let mut sink = Vec::new();
        cmd_fit_base(&cfg, &mut sink).unwrap();
        cmd_train_diffusion(&cfg, &mut sink).unwrap();
        sink.clear();
        cmd_sweep(&cfg, &[0, 5, 10], &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4, "header plus one row per stop step");
        assert!(lines[1].contains(",0,"));
        assert!(lines[2].contains(",5,"));
        assert!(lines[3].contains(",10,"));
    }

    #[test]
    fn fixed_seed_runs_are_bitwise_reproducible() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut out_a = Vec::new();
        let mut out_b = Vec::new();
        for (dir, out) in [(&dir_a, &mut out_a), (&dir_b, &mut out_b)] {
            let cfg = tiny_config(dir.path());
            cmd_fit_base(&cfg, out).unwrap();
            cmd_train_diffusion(&cfg, out).unwrap();
            cmd_sample(&cfg, &SampleOpts::default(), out).unwrap();
        }
        assert_eq!(out_a, out_b);
        let ckpt_a = std::fs::read(dir_a.path().join("model.ckpt")).unwrap();
        let ckpt_b = std::fs::read(dir_b.path().join("model.ckpt")).unwrap();
        assert_eq!(ckpt_a, ckpt_b);
        let samples_a = std::fs::read(dir_a.path().join("samples.csv")).unwrap();
        let samples_b = std::fs::read(dir_b.path().join("samples.csv")).unwrap();
        assert_eq!(samples_a, samples_b);
    }

    #[test]
    fn conditional_pipeline_labels_every_sample() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.dataset.kind = DatasetKind::ClassRing;
        cfg.dataset.modes = 3;
        cfg.conditional = true;
        cfg.gmm_components = 1;
        cfg.sample_count = 9;
        let mut sink = Vec::new();
        cmd_fit_base(&cfg, &mut sink).unwrap();
        cmd_train_diffusion(&cfg, &mut sink).unwrap();
        sink.clear();
        cmd_sample(&cfg, &SampleOpts::default(), &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        assert!(text.starts_with("class,x0,x1"));
        // 9 samples over 3 classes: three of each.
        for c in 0..3 {
            assert_eq!(
                text.lines().filter(|l| l.starts_with(&format!("{c},"))).count(),
                3
            );
        }
    }

    #[test]
    fn base_only_plan_needs_no_model_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.t_prime = 0;
        let mut sink = Vec::new();
        cmd_fit_base(&cfg, &mut sink).unwrap();
        sink.clear();
        cmd_sample(&cfg, &SampleOpts::default(), &mut sink).unwrap();
        let text = String::from_utf8(sink).unwrap();
        assert_eq!(text.lines().count(), 1 + cfg.sample_count);
    }

    #[test]
    fn train_command_rejects_a_zero_stop_step_as_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.t_prime = 0;
        let mut sink = Vec::new();
        let err = cmd_train_diffusion(&cfg, &mut sink).unwrap_err();
        assert!(err.is_config());
    }
}

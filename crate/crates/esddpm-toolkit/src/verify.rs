//! Self-contained invariant suite behind the `verify` subcommand: a
//! battery of fast numerical checks that exercise the engine end to end
//! against independent oracles (quadrature, finite differences, Monte
//! Carlo, exact closed forms). Every check runs even when an earlier
//! one fails; the command exits nonzero if any check fails.

use crate::report::CheckOutcome;
use esddpm_core::basegen::{BaseGenerator, OracleSampler};
use esddpm_core::diffusion::{CountingPredictor, DiffusionModel, FnPredictor, SigmaMode};
use esddpm_core::elbo::{verify_elbo_bound, LinearGaussianInstance};
use esddpm_core::metrics::{energy_distance, energy_permutation_p, sliced_wasserstein};
use esddpm_core::nn::{Network, NetworkConfig};
use esddpm_core::reference;
use esddpm_core::sampler::{ddim_step, es_sample, PlanMode, SamplerPlan};
use esddpm_core::schedule::NoiseSchedule;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn outcome(name: &'static str, pass: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, pass, detail }
}

/// Catches a panic inside a check and converts it into a failure line,
/// so one broken invariant cannot take down the rest of the suite.
fn guarded(
    name: &'static str,
    f: impl FnOnce() -> (bool, String) + std::panic::UnwindSafe,
) -> CheckOutcome {
    match std::panic::catch_unwind(f) {
        Ok((pass, detail)) => outcome(name, pass, detail),
        Err(_) => outcome(name, false, "check panicked".into()),
    }
}

// ---------------------------------------------------------------------
// Individual checks
// ---------------------------------------------------------------------

fn check_marginal_vs_chain(seed: u64) -> (bool, String) {
    let schedule = NoiseSchedule::linear(8, 1e-3, 0.2).expect("schedule");
    let t = schedule.horizon();
    let x0 = 1.3;
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let mut x = x0;
        for &beta in schedule.betas() {
            let xi: f64 = rng.sample(rand_distr::StandardNormal);
            x = (1.0 - beta).sqrt() * x + beta.sqrt() * xi;
        }
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let var = sum_sq / n as f64 - mean * mean;
    let marginal = schedule.marginal(t).expect("marginal");
    let want_mean = marginal.scale * x0;
    let want_var = marginal.noise_var;
    let se_mean = (want_var / n as f64).sqrt();
    let se_var = want_var * (2.0 / (n as f64 - 1.0)).sqrt();
    let mean_ok = (mean - want_mean).abs() <= 4.0 * se_mean;
    let var_ok = (var - want_var).abs() <= 4.0 * se_var;
    (
        mean_ok && var_ok,
        format!(
            "mean {:.2} SE off, variance {:.2} SE off (20k composed chains, T=8)",
            (mean - want_mean).abs() / se_mean,
            (var - want_var).abs() / se_var
        ),
    )
}

fn check_gradients_vs_finite_differences(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = NetworkConfig::new(3, 16).with_hidden(vec![6]);
    cfg.time_dim = 4;
    let mut net = Network::new(&cfg.with_classes(3), &mut rng).expect("net");
    // Spread the parameters away from their small init so every path
    // through the activations carries signal.
    let p: Vec<f64> = net
        .flat_params()
        .iter()
        .map(|v| v + rng.random::<f64>() * 0.6 - 0.3)
        .collect();
    net.set_flat_params(&p).expect("set params");
    let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let upstream: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let got = net.backprop(&x, 5, Some(1), &upstream).expect("backprop").flatten();
    let want = reference::central_diff_grads(&mut net, &x, 5, Some(1), &upstream, 1e-5);
    let worst = got
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max);
    (worst < 1e-4, format!("worst relative gradient error {worst:.2e}"))
}

fn check_posterior_vs_quadrature(seed: u64) -> (bool, String) {
    let schedule = NoiseSchedule::linear(12, 1e-3, 0.1).expect("schedule");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x0 = rng.random::<f64>() * 4.0 - 2.0;
        let xt = rng.random::<f64>() * 4.0 - 2.0;
        let t = rng.random_range(2..=schedule.horizon());
        let (mean, var) = schedule
            .posterior_params(&[x0], &[xt], t)
            .expect("closed form");
        let (q_mean, q_var) = reference::posterior_quadrature_1d(&schedule, x0, xt, t);
        worst = worst.max((mean[0] - q_mean).abs()).max((var - q_var).abs());
    }
    (worst < 1e-6, format!("worst quadrature deviation {worst:.2e} over 20 tuples"))
}

fn check_elbo_bounds_exact_loglik(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = NoiseSchedule::linear(10, 1e-3, 0.1).expect("schedule");
    let mut worst_ratio = 0.0f64;
    for (i, t_prime) in (1..=5).enumerate() {
        let x0 = -1.0 + 0.5 * i as f64;
        // The residual of the near-tight construction scales with
        // spread^2 relative to the noise mass at the stop step, so the
        // spread is normalized to that mass to keep the gap uniformly
        // small across stop steps.
        let spread = 0.25 * (1.0 - schedule.alpha_bar(t_prime)).sqrt();
        let instance = LinearGaussianInstance::tight(schedule.clone(), t_prime, x0, spread)
            .expect("instance");
        match verify_elbo_bound(&instance, 400, &mut rng) {
            Ok(report) => {
                let gap = report.gap.unwrap_or(f64::NAN);
                if !gap.is_finite() {
                    return (false, format!("non-finite gap at stop step {t_prime}"));
                }
                // A near-tight instance leaves a genuine residual of
                // order spread^2 plus Monte Carlo noise; anything beyond
                // that band means the bound or the exact density is off.
                let band = 0.05 + 4.0 * report.mc_stderr;
                if gap.abs() > band {
                    return (
                        false,
                        format!(
                            "gap {gap:.3} outside the tightness band {band:.3} at stop step {t_prime}"
                        ),
                    );
                }
                worst_ratio = worst_ratio.max(gap.abs() / band);
            }
            Err(e) => return (false, format!("bound violated at stop step {t_prime}: {e}")),
        }
    }
    (
        true,
        format!("5 near-tight instances inside the tightness band (worst at {worst_ratio:.0e} of it)"),
    )
}

fn check_base_only_plan_is_the_base(seed: u64) -> (bool, String) {
    let data: Vec<Vec<f64>> = (0..10)
        .map(|i| vec![i as f64 * 0.37, (i as f64).sin()])
        .collect();
    let oracle = OracleSampler::new(data.clone(), None, 0.0).expect("oracle");
    let generator = BaseGenerator::oracle(oracle);
    let schedule = NoiseSchedule::linear(6, 1e-3, 0.1).expect("schedule");
    let net = FnPredictor::new(2, |x: &[f64], _t| vec![0.0; x.len()]);
    let counted = CountingPredictor::new(net);
    let model = DiffusionModel::new(counted, schedule, 6, SigmaMode::BetaTilde).expect("model");
    let plan = SamplerPlan::full(0, PlanMode::Ancestral);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = es_sample(&model, &generator, &plan, 5, None, &mut rng).expect("sample");
    let all_rows = samples.iter().all(|s| data.iter().any(|d| d == s));
    let evals = model.net.count();
    (
        all_rows && evals == 0,
        format!(
            "5 base-only draws, {} matched a source row bitwise, {evals} denoiser evaluations",
            samples.iter().filter(|s| data.iter().any(|d| d == *s)).count()
        ),
    )
}

fn check_deterministic_jump_uses_no_randomness(seed: u64) -> (bool, String) {
    let schedule = NoiseSchedule::linear(8, 1e-3, 0.1).expect("schedule");
    let net = FnPredictor::new(2, |x: &[f64], _t| x.iter().map(|v| 0.1 * v).collect());
    let model = DiffusionModel::new(net, schedule, 8, SigmaMode::BetaTilde).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let before = (rng.get_stream(), rng.get_word_pos());
    let out = ddim_step(&model, &[0.4, -0.2], 6, 3, 0.0, None, &mut rng).expect("jump");
    let after = (rng.get_stream(), rng.get_word_pos());
    (
        before == after && out.len() == 2,
        format!(
            "RNG word position moved by {} during a deterministic jump",
            after.1 - before.1
        ),
    )
}

fn check_respaced_plan_cost(seed: u64) -> (bool, String) {
    let schedule = NoiseSchedule::linear(20, 1e-3, 0.1).expect("schedule");
    let net = FnPredictor::new(1, |x: &[f64], _t| vec![0.0; x.len()]);
    let counted = CountingPredictor::new(net);
    let model = DiffusionModel::new(counted, schedule, 20, SigmaMode::BetaTilde).expect("model");
    let oracle = OracleSampler::new(vec![vec![0.0]; 4], None, 0.0).expect("oracle");
    let generator = BaseGenerator::oracle(oracle);
    let plan = SamplerPlan::uniform(20, 4, PlanMode::Ancestral, 0.0).expect("plan");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    es_sample(&model, &generator, &plan, n, None, &mut rng).expect("sample");
    let evals = model.net.count();
    let want = (n * plan.len()) as u64;
    (
        evals == want,
        format!("{evals} denoiser evaluations for {n} samples on a {}-step plan (want {want})", plan.len()),
    )
}

fn check_checkpoint_round_trip(seed: u64) -> (bool, String) {
    use crate::checkpoint::{from_bytes, to_bytes, Checkpoint};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = NoiseSchedule::linear(9, 1e-3, 0.1).expect("schedule");
    let mut cfg = NetworkConfig::new(2, 9).with_hidden(vec![5]);
    cfg.time_dim = 4;
    let net = Network::new(&cfg, &mut rng).expect("net");
    let model = DiffusionModel::new(net, schedule, 4, SigmaMode::Beta).expect("model");
    let ckpt = Checkpoint::from_model(&model);
    let bytes = to_bytes(&ckpt);
    let back = from_bytes(&bytes).expect("decode");
    let again = to_bytes(&back);
    let rebuilt = back.diffusion_model().expect("rebuild");
    (
        bytes == again && rebuilt.net.flat_params() == model.net.flat_params(),
        format!("{} bytes, re-encoded identically", bytes.len()),
    )
}

fn check_identical_sets_score_zero(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..2).map(|_| rng.random::<f64>() * 3.0).collect())
        .collect();
    let energy = energy_distance(&a, &a).expect("energy");
    let mut proj_rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let sliced = sliced_wasserstein(&a, &a, 16, &mut proj_rng).expect("sliced");
    (
        energy == 0.0 && sliced == 0.0,
        format!("energy {energy:e}, sliced distance {sliced:e} on a set against itself"),
    )
}

fn check_permutation_flags_separated_sets(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<Vec<f64>> = (0..20).map(|i| vec![0.01 * i as f64]).collect();
    let b: Vec<Vec<f64>> = (0..20).map(|i| vec![8.0 + 0.01 * i as f64]).collect();
    let p = energy_permutation_p(&a, &b, 99, &mut rng).expect("test");
    (
        p == 0.01,
        format!("p = {p} for two clusters eight units apart (99 permutations)"),
    )
}

// ---------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------

/// Runs every check with sub-seeds derived from `seed` and returns one
/// outcome per check, in a fixed order.
pub fn run_verification(seed: u64) -> Vec<CheckOutcome> {
    let s = |k: u64| seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k);
    vec![
        guarded("marginal-matches-composed-chain", move || {
            check_marginal_vs_chain(s(1))
        }),
        guarded("gradients-match-finite-differences", move || {
            check_gradients_vs_finite_differences(s(2))
        }),
        guarded("posterior-matches-quadrature", move || {
            check_posterior_vs_quadrature(s(3))
        }),
        guarded("elbo-bounds-the-exact-likelihood", move || {
            check_elbo_bounds_exact_loglik(s(4))
        }),
        guarded("base-only-plan-returns-the-base-draw", move || {
            check_base_only_plan_is_the_base(s(5))
        }),
        guarded("deterministic-jump-uses-no-randomness", move || {
            check_deterministic_jump_uses_no_randomness(s(6))
        }),
        guarded("respaced-plan-evaluates-once-per-step", move || {
            check_respaced_plan_cost(s(7))
        }),
        guarded("checkpoint-survives-byte-round-trip", move || {
            check_checkpoint_round_trip(s(8))
        }),
        guarded("identical-sets-score-zero", move || {
            check_identical_sets_score_zero(s(9))
        }),
        guarded("permutation-test-flags-separated-sets", move || {
            check_permutation_flags_separated_sets(s(10))
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_whole_suite_passes_on_the_default_seed() {
        let outcomes = run_verification(0);
        assert_eq!(outcomes.len(), 10);
        for o in &outcomes {
            assert!(o.pass, "{} failed: {}", o.name, o.detail);
        }
    }

    #[test]
    fn check_names_are_unique_and_stable() {
        let outcomes = run_verification(1);
        let mut names: Vec<&str> = outcomes.iter().map(|o| o.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 10);
    }

    #[test]
    fn a_panicking_check_reports_failure_instead_of_aborting() {
        let o = guarded("boom", || panic!("nope"));
        assert!(!o.pass);
        assert_eq!(o.detail, "check panicked");
    }
}

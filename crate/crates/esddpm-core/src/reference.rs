//! Brute-force cross-checks, written straight from definitions.
//!
//! Everything in this module deliberately avoids the optimized code paths
//! it is used to verify: gradients come from central finite differences,
//! posterior moments from grid quadrature over the defining densities, and
//! distances from plain double loops. The `verify` command and the test
//! suites compare the production implementations against these.

use alloc::vec::Vec;
// Supplies the float transcendentals in no_std builds; the inherent
// methods shadow it when std is enabled.
#[allow(unused_imports)]
use num_traits::Float;

use crate::nn::Network;
use crate::schedule::NoiseSchedule;

/// Gradient of `dot(upstream, net(x, t, class))` by central differences
/// with step `h`, in flat parameter order. Restores the network bitwise.
pub fn central_diff_grads(
    net: &mut Network,
    x: &[f64],
    t: usize,
    class: Option<usize>,
    upstream: &[f64],
    h: f64,
) -> Vec<f64> {
    let base = net.flat_params();
    let mut grads = Vec::with_capacity(base.len());
    let mut work = base.clone();
    let eval = |n: &Network| {
        let out = n.predict_eps(x, t, class).expect("probe eval");
        out.iter().zip(upstream).map(|(o, u)| o * u).sum::<f64>()
    };
    for i in 0..base.len() {
        work[i] = base[i] + h;
        net.set_flat_params(&work).expect("probe set");
        let plus = eval(net);
        work[i] = base[i] - h;
        net.set_flat_params(&work).expect("probe set");
        let minus = eval(net);
        work[i] = base[i];
        grads.push((plus - minus) / (2.0 * h));
    }
    net.set_flat_params(&base).expect("restore");
    grads
}

/// Posterior mean and variance of `x[t-1]` given scalar `x0` and `xt`,
/// computed by trapezoid quadrature over the product of the two defining
/// Gaussians. Needs t >= 2 so that the prior factor has positive variance.
pub fn posterior_quadrature_1d(
    schedule: &NoiseSchedule,
    x0: f64,
    xt: f64,
    t: usize,
) -> (f64, f64) {
    assert!(t >= 2 && t <= schedule.horizon(), "quadrature needs 2 <= t <= T");
    let prior_mean = schedule.alpha_bar(t - 1).sqrt() * x0;
    let prior_var = 1.0 - schedule.alpha_bar(t - 1);
    let like_scale = schedule.alpha(t).sqrt();
    let like_var = schedule.beta(t);
    // The likelihood, read as a density in x[t-1], peaks at xt / like_scale.
    let lo = (prior_mean - 14.0 * prior_var.sqrt())
        .min(xt / like_scale - 14.0 * (like_var.sqrt() / like_scale));
    let hi = (prior_mean + 14.0 * prior_var.sqrt())
        .max(xt / like_scale + 14.0 * (like_var.sqrt() / like_scale));
    let n = 40_000usize;
    let step = (hi - lo) / n as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let u = lo + step * i as f64;
        let d0 = u - prior_mean;
        let d1 = xt - like_scale * u;
        let log_w = -d0 * d0 / (2.0 * prior_var) - d1 * d1 / (2.0 * like_var);
        let mut w = log_w.exp();
        if i == 0 || i == n {
            w *= 0.5;
        }
        z += w;
        m1 += w * u;
        m2 += w * u * u;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// KL divergence between two 1-D Gaussians by trapezoid quadrature of
/// `q log(q / p)` over a wide grid around `q`.
pub fn gaussian_kl_quadrature_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    assert!(v1 > 0.0 && v2 > 0.0);
    let sd = v1.sqrt();
    let (lo, hi) = (m1 - 16.0 * sd, m1 + 16.0 * sd);
    let n = 200_000usize;
    let step = (hi - lo) / n as f64;
    let log_norm_q = -0.5 * (2.0 * core::f64::consts::PI * v1).ln();
    let log_norm_p = -0.5 * (2.0 * core::f64::consts::PI * v2).ln();
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + step * i as f64;
        let lq = log_norm_q - (x - m1) * (x - m1) / (2.0 * v1);
        let lp = log_norm_p - (x - m2) * (x - m2) / (2.0 * v2);
        let mut term = lq.exp() * (lq - lp);
        if i == 0 || i == n {
            term *= 0.5;
        }
        acc += term;
    }
    acc * step
}

/// Reverse-chain loss for explicit 1-D linear kernels, by trapezoid
/// quadrature over the noisy-state marginals.
///
/// `kernels[t - 1] = (slope, intercept, var)` parameterizes the reverse
/// conditional at step t as a Gaussian with mean `slope * x + intercept`.
/// For each step above the first, the integrand is the closed-form KL
/// between the forward posterior at `x0` and that kernel, weighted by the
/// marginal density of the noisy state; the first step contributes the
/// expected negative log-density of `x0` under its kernel.
pub fn chain_loss_quadrature_1d(
    schedule: &crate::schedule::NoiseSchedule,
    x0: f64,
    kernels: &[(f64, f64, f64)],
) -> f64 {
    let t_prime = kernels.len();
    assert!(t_prime >= 1 && t_prime <= schedule.horizon());
    let two_pi = 2.0 * core::f64::consts::PI;
    let grid = 40_000usize;
    let expect_over_marginal = |t: usize, f: &dyn Fn(f64) -> f64| -> f64 {
        let ab = schedule.alpha_bar(t);
        let (mean, var) = (ab.sqrt() * x0, 1.0 - ab);
        let sd = var.sqrt();
        let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
        let step = (hi - lo) / grid as f64;
        let norm = 1.0 / (two_pi * var).sqrt();
        let mut acc = 0.0;
        for i in 0..=grid {
            let x = lo + step * i as f64;
            let w = norm * (-(x - mean) * (x - mean) / (2.0 * var)).exp();
            let mut term = w * f(x);
            if i == 0 || i == grid {
                term *= 0.5;
            }
            acc += term;
        }
        acc * step
    };
    let mut total = 0.0;
    for t in 2..=t_prime {
        let (slope, intercept, var) = kernels[t - 1];
        let ab_t = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t - 1);
        let beta = schedule.beta(t);
        let alpha = schedule.alpha(t);
        let post_var = beta * (1.0 - ab_prev) / (1.0 - ab_t);
        total += expect_over_marginal(t, &|xt: f64| {
            let post_mean =
                (ab_prev.sqrt() * beta * x0 + alpha.sqrt() * (1.0 - ab_prev) * xt) / (1.0 - ab_t);
            let diff = slope * xt + intercept - post_mean;
            0.5 * (post_var / var + diff * diff / var - 1.0 + (var / post_var).ln())
        });
    }
    let (slope, intercept, var) = kernels[0];
    total += expect_over_marginal(1, &|x1: f64| {
        let diff = x0 - slope * x1 - intercept;
        0.5 * ((two_pi * var).ln() + diff * diff / var)
    });
    total
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Energy distance by explicit index loops over all pairs, diagonal
/// included in the within-set sums.
pub fn naive_energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += dist(&a[i], &b[j]);
        }
    }
    let mut within_a = 0.0;
    for i in 0..n {
        for j in 0..n {
            within_a += dist(&a[i], &a[j]);
        }
    }
    let mut within_b = 0.0;
    for i in 0..m {
        for j in 0..m {
            within_b += dist(&b[i], &b[j]);
        }
    }
    2.0 * cross / (n as f64 * m as f64)
        - within_a / (n as f64 * n as f64)
        - within_b / (m as f64 * m as f64)
}

fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d2 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

/// Unbiased squared MMD with an RBF kernel, by explicit loops that skip
/// the diagonals of the within-set sums.
pub fn naive_mmd_unbiased(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut kaa = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kaa += rbf(&a[i], &a[j], bandwidth);
            }
        }
    }
    let mut kbb = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kbb += rbf(&b[i], &b[j], bandwidth);
            }
        }
    }
    let mut kab = 0.0;
    for i in 0..n {
        for j in 0..m {
            kab += rbf(&a[i], &b[j], bandwidth);
        }
    }
    kaa / (n as f64 * (n - 1) as f64) + kbb / (m as f64 * (m - 1) as f64)
        - 2.0 * kab / (n as f64 * m as f64)
}

/// Exact 1-D Wasserstein-1 for equal-size samples: sort both and average
/// the absolute differences of the order statistics.
pub fn naive_w1_equal_1d(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    sa.iter()
        .zip(&sb)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64
}

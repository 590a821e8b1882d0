//! Sample-set comparison at desk scale.
//!
//! Scalar distances between two point clouds (energy distance as the
//! primary zero-hyperparameter score, kernel discrepancy, sliced
//! transport cost), coverage scores splitting fidelity from diversity,
//! and a permutation two-sample test for "statistically
//! indistinguishable" claims. Everything works directly in data space
//! with exact pairwise sums; nothing here needs an embedding network.

use alloc::vec;
use alloc::vec::Vec;
// Supplies the float transcendentals in no_std builds; the inherent
// methods shadow it when std is enabled.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Metric evaluation failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("set of {n} points is below the minimum {min}")]
    TooFewPoints { n: usize, min: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    BadParam(&'static str),
}

/// Knobs for the combined report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Neighborhood size for the coverage scores.
    pub k: usize,
    /// Number of random directions for the sliced transport cost.
    pub n_projections: usize,
    /// Permutations for the two-sample test; `None` skips it.
    pub n_perms: Option<usize>,
    /// Kernel bandwidth; `None` uses the median pairwise distance.
    pub mmd_bandwidth: Option<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            k: 5,
            n_projections: 128,
            n_perms: None,
            mmd_bandwidth: None,
        }
    }
}

/// All scores for one generated-vs-reference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub energy_distance: f64,
    pub mmd_rbf: f64,
    /// Bandwidth the kernel discrepancy actually used.
    pub mmd_bandwidth: f64,
    pub sliced_wasserstein: f64,
    /// Direction count the sliced cost averaged over.
    pub n_projections: usize,
    pub knn_precision: f64,
    pub knn_recall: f64,
    pub permutation_p: Option<f64>,
}

/// Kernel discrepancy value together with the bandwidth it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate {
    pub value: f64,
    pub bandwidth: f64,
}

// ---------------------------------------------------------------------
// Shared validation and small helpers
// ---------------------------------------------------------------------

fn check_set(set: &[Vec<f64>], min: usize) -> Result<usize, MetricsError> {
    if set.len() < min {
        return Err(MetricsError::TooFewPoints {
            n: set.len(),
            min,
        });
    }
    let d = set[0].len();
    for row in set {
        if row.len() != d {
            return Err(MetricsError::DimMismatch {
                expected: d,
                got: row.len(),
            });
        }
    }
    Ok(d)
}

fn check_pair(a: &[Vec<f64>], b: &[Vec<f64>], min: usize) -> Result<usize, MetricsError> {
    let da = check_set(a, min)?;
    let db = check_set(b, min)?;
    if da != db {
        return Err(MetricsError::DimMismatch {
            expected: da,
            got: db,
        });
    }
    Ok(da)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

// ---------------------------------------------------------------------
// Energy distance
// ---------------------------------------------------------------------

/// Energy distance `2 E|a - b| - E|a - a'| - E|b - b'|` with exact
/// pairwise sums (diagonal included in the within-set terms, so two
/// identical sets score exactly zero). Nonnegative up to roundoff.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricsError> {
    check_pair(a, b, 2)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += dist(x, y);
        }
    }
    let mut within_a = 0.0;
    for x in a {
        for y in a {
            within_a += dist(x, y);
        }
    }
    let mut within_b = 0.0;
    for x in b {
        for y in b {
            within_b += dist(x, y);
        }
    }
    Ok(2.0 * (cross / (n * m)) - within_a / (n * n) - within_b / (m * m))
}

// ---------------------------------------------------------------------
// Kernel discrepancy
// ---------------------------------------------------------------------

/// Median pairwise distance over the pooled sets, the default kernel
/// bandwidth. Errors when the pool is too degenerate for a positive
/// median (more than half the pairs coincide).
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricsError> {
    check_pair(a, b, 1)?;
    let pool: Vec<&Vec<f64>> = a.iter().chain(b.iter()).collect();
    let mut dists = Vec::with_capacity(pool.len() * (pool.len() - 1) / 2);
    for i in 0..pool.len() {
        for j in (i + 1)..pool.len() {
            dists.push(dist(pool[i], pool[j]));
        }
    }
    if dists.is_empty() {
        return Err(MetricsError::TooFewPoints { n: 1, min: 2 });
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median <= 0.0 {
        return Err(MetricsError::BadParam(
            "median pairwise distance is not positive",
        ));
    }
    Ok(median)
}

fn resolve_bandwidth(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: Option<f64>,
) -> Result<f64, MetricsError> {
    match bandwidth {
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(_) => Err(MetricsError::BadParam("bandwidth must be positive")),
        None => median_bandwidth(a, b),
    }
}

/// Unbiased squared kernel discrepancy with the Gaussian kernel
/// `exp(-|x - y|^2 / (2 bandwidth^2))`; within-set sums skip the
/// diagonal, so the estimate can dip slightly negative on equal
/// distributions. `None` bandwidth uses the median heuristic.
pub fn mmd_rbf(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: Option<f64>,
) -> Result<MmdEstimate, MetricsError> {
    check_pair(a, b, 2)?;
    let bw = resolve_bandwidth(a, b, bandwidth)?;
    let (n, m) = (a.len(), b.len());
    let mut kaa = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kaa += rbf(&a[i], &a[j], bw);
            }
        }
    }
    let mut kbb = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kbb += rbf(&b[i], &b[j], bw);
            }
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += rbf(x, y, bw);
        }
    }
    let value = kaa / (n as f64 * (n - 1) as f64) + kbb / (m as f64 * (m - 1) as f64)
        - 2.0 * (kab / (n as f64 * m as f64));
    Ok(MmdEstimate { value, bandwidth: bw })
}

/// Biased squared kernel discrepancy (diagonals kept), which is exactly
/// zero for identical sets and never negative.
pub fn mmd_rbf_biased(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: Option<f64>,
) -> Result<MmdEstimate, MetricsError> {
    check_pair(a, b, 1)?;
    let bw = resolve_bandwidth(a, b, bandwidth)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut kaa = 0.0;
    for x in a {
        for y in a {
            kaa += rbf(x, y, bw);
        }
    }
    let mut kbb = 0.0;
    for x in b {
        for y in b {
            kbb += rbf(x, y, bw);
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += rbf(x, y, bw);
        }
    }
    let value = kaa / (n * n) + kbb / (m * m) - 2.0 * (kab / (n * m));
    Ok(MmdEstimate { value, bandwidth: bw })
}

// ---------------------------------------------------------------------
// Sliced transport cost
// ---------------------------------------------------------------------

/// Exact Wasserstein-1 between two sorted 1-D empirical distributions,
/// by walking the quantile segments (handles unequal sizes).
fn w1_sorted_1d(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut level = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        acc += (next - level) * (a[i] - b[j]).abs();
        level = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    acc
}

/// Mean 1-D Wasserstein-1 over random unit directions. Sizes may differ;
/// each projection is matched exactly through the quantile functions.
pub fn sliced_wasserstein(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_projections: usize,
    rng: &mut impl Rng,
) -> Result<f64, MetricsError> {
    let d = check_pair(a, b, 1)?;
    if n_projections == 0 {
        return Err(MetricsError::BadParam("projection count must be positive"));
    }
    let mut total = 0.0;
    let mut pa = vec![0.0; a.len()];
    let mut pb = vec![0.0; b.len()];
    for _ in 0..n_projections {
        let mut dir = vec![0.0; d];
        loop {
            for v in dir.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in dir.iter_mut() {
                    *v /= norm;
                }
                break;
            }
        }
        for (p, x) in pa.iter_mut().zip(a) {
            *p = x.iter().zip(&dir).map(|(v, w)| v * w).sum();
        }
        for (p, x) in pb.iter_mut().zip(b) {
            *p = x.iter().zip(&dir).map(|(v, w)| v * w).sum();
        }
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        total += w1_sorted_1d(&pa, &pb);
    }
    Ok(total / n_projections as f64)
}

// ---------------------------------------------------------------------
// Coverage scores
// ---------------------------------------------------------------------

fn knn_radii(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if i != j {
                dists.push(dist(&points[i], &points[j]));
            }
        }
        dists.sort_by(f64::total_cmp);
        radii.push(dists[k - 1]);
    }
    radii
}

fn covered_fraction(points: &[Vec<f64>], anchors: &[Vec<f64>], radii: &[f64]) -> f64 {
    let inside = points
        .iter()
        .filter(|p| {
            anchors
                .iter()
                .zip(radii)
                .any(|(anchor, &r)| dist(p, anchor) <= r)
        })
        .count();
    inside as f64 / points.len() as f64
}

/// Coverage scores over k-nearest-neighbor balls: precision is the
/// fraction of generated points inside the union of balls around
/// reference points (ball radius = distance to the k-th other reference
/// point), recall the same with the roles swapped. Both sets need at
/// least k + 1 points.
pub fn knn_precision_recall(
    generated: &[Vec<f64>],
    reference: &[Vec<f64>],
    k: usize,
) -> Result<(f64, f64), MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadParam("neighborhood size must be positive"));
    }
    check_pair(generated, reference, k + 1)?;
    let ref_radii = knn_radii(reference, k);
    let gen_radii = knn_radii(generated, k);
    let precision = covered_fraction(generated, reference, &ref_radii);
    let recall = covered_fraction(reference, generated, &gen_radii);
    Ok((precision, recall))
}

// ---------------------------------------------------------------------
// Permutation test
// ---------------------------------------------------------------------

/// Two-sample permutation test for an arbitrary statistic (larger =
/// more separated). Returns `(1 + #{permuted >= observed}) / (n_perms + 1)`,
/// a valid p-value that never reaches zero.
pub fn permutation_test<F>(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    statistic: F,
    n_perms: usize,
    rng: &mut impl Rng,
) -> Result<f64, MetricsError>
where
    F: Fn(&[Vec<f64>], &[Vec<f64>]) -> f64,
{
    check_pair(a, b, 1)?;
    if n_perms == 0 {
        return Err(MetricsError::BadParam("permutation count must be positive"));
    }
    let observed = statistic(a, b);
    let mut pool: Vec<Vec<f64>> = a.iter().chain(b.iter()).cloned().collect();
    let split = a.len();
    let mut exceed = 0usize;
    for _ in 0..n_perms {
        // Fisher-Yates; composing shuffles keeps each round uniform.
        for i in (1..pool.len()).rev() {
            let j = rng.random_range(0..=i);
            pool.swap(i, j);
        }
        if statistic(&pool[..split], &pool[split..]) >= observed {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (n_perms + 1) as f64)
}

/// Permutation test with the energy distance as the statistic.
pub fn energy_permutation_p(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_perms: usize,
    rng: &mut impl Rng,
) -> Result<f64, MetricsError> {
    check_pair(a, b, 2)?;
    permutation_test(
        a,
        b,
        |x, y| energy_distance(x, y).expect("sizes preserved by permutation"),
        n_perms,
        rng,
    )
}

// ---------------------------------------------------------------------
// Density score and combined report
// ---------------------------------------------------------------------

/// Plug-in kernel bandwidth for a density estimate over `data`: the
/// mean per-coordinate standard deviation scaled by `n^(-1/(d + 4))`.
/// Unlike the median pairwise distance, this shrinks with the sample
/// size, so the estimate resolves manifold-scale structure.
pub fn silverman_bandwidth(data: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let d = check_set(data, 2)?;
    let n = data.len() as f64;
    let mut sd_sum = 0.0;
    for j in 0..d {
        let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = data.iter().map(|x| (x[j] - mean) * (x[j] - mean)).sum::<f64>() / (n - 1.0);
        sd_sum += var.sqrt();
    }
    let sd = sd_sum / d as f64;
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(MetricsError::BadParam(
            "data spread must be positive and finite",
        ));
    }
    Ok(sd * n.powf(-1.0 / (d as f64 + 4.0)))
}

/// Log-density of `query` under a Gaussian kernel density estimate over
/// `data` with the given bandwidth, computed stably in log space.
pub fn gaussian_kde_log_density(
    data: &[Vec<f64>],
    query: &[f64],
    bandwidth: f64,
) -> Result<f64, MetricsError> {
    let d = check_set(data, 1)?;
    if query.len() != d {
        return Err(MetricsError::DimMismatch {
            expected: d,
            got: query.len(),
        });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(MetricsError::BadParam("bandwidth must be positive"));
    }
    let inv_two_var = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut exponents = Vec::with_capacity(data.len());
    let mut max = f64::NEG_INFINITY;
    for x in data {
        let d2: f64 = x.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        let e = -d2 * inv_two_var;
        if e > max {
            max = e;
        }
        exponents.push(e);
    }
    let sum: f64 = exponents.iter().map(|&e| (e - max).exp()).sum();
    let norm = -0.5 * d as f64 * (2.0 * core::f64::consts::PI * bandwidth * bandwidth).ln();
    Ok(max + sum.ln() - (data.len() as f64).ln() + norm)
}

/// Runs the full metric battery for one generated-vs-reference pair.
pub fn evaluate(
    generated: &[Vec<f64>],
    reference: &[Vec<f64>],
    config: &MetricConfig,
    rng: &mut impl Rng,
) -> Result<MetricReport, MetricsError> {
    let energy = energy_distance(generated, reference)?;
    let mmd = mmd_rbf(generated, reference, config.mmd_bandwidth)?;
    let sliced = sliced_wasserstein(generated, reference, config.n_projections, rng)?;
    let (precision, recall) = knn_precision_recall(generated, reference, config.k)?;
    let permutation_p = match config.n_perms {
        Some(n) => Some(energy_permutation_p(generated, reference, n, rng)?),
        None => None,
    };
    let report = MetricReport {
        energy_distance: energy,
        mmd_rbf: mmd.value,
        mmd_bandwidth: mmd.bandwidth,
        sliced_wasserstein: sliced,
        n_projections: config.n_projections,
        knn_precision: precision,
        knn_recall: recall,
        permutation_p,
    };
    let finite = report.energy_distance.is_finite()
        && report.mmd_rbf.is_finite()
        && report.sliced_wasserstein.is_finite()
        && report.knn_precision.is_finite()
        && report.knn_recall.is_finite();
    if !finite {
        return Err(MetricsError::BadParam("metric overflowed to non-finite"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_cloud(
        n: usize,
        d: usize,
        mean: f64,
        sd: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let xi: f64 = rng.sample(StandardNormal);
                        mean + sd * xi
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn energy_identical_sets_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let a = gaussian_cloud(40, 3, 0.0, 1.0, &mut rng);
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn energy_separates_distant_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = gaussian_cloud(1000, 1, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(1000, 1, 10.0, 1.0, &mut rng);
        // Closed form: 2 * 10 - 2 / sqrt(pi) or so; anything near 17-18.
        assert!(energy_distance(&a, &b).unwrap() > 15.0);
    }

    #[test]
    fn energy_matches_reference_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let a = gaussian_cloud(60, 3, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(45, 3, 0.5, 1.5, &mut rng);
        let ours = energy_distance(&a, &b).unwrap();
        let naive = reference::naive_energy_distance(&a, &b);
        assert!((ours - naive).abs() < 1e-12);
    }

    #[test]
    fn energy_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a = gaussian_cloud(50, 2, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(50, 2, 1.0, 0.5, &mut rng);
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rotate = |set: &[Vec<f64>]| -> Vec<Vec<f64>> {
            set.iter()
                .map(|p| vec![c * p[0] - s * p[1], s * p[0] + c * p[1]])
                .collect()
        };
        let before = energy_distance(&a, &b).unwrap();
        let after = energy_distance(&rotate(&a), &rotate(&b)).unwrap();
        assert!((before - after).abs() < 1e-9 * before.max(1.0));
    }

    #[test]
    fn energy_rejects_undersized_sets() {
        let a = vec![vec![0.0]];
        let b = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            energy_distance(&a, &b),
            Err(MetricsError::TooFewPoints { n: 1, min: 2 })
        ));
    }

    #[test]
    fn mmd_on_equal_sets_is_tiny() {
        // Biased form cancels exactly. The unbiased form loses the
        // diagonal, leaving a deficit of about -2 (1 - mean kernel) / n,
        // so a tight cluster keeps it above the pinned -1e-3.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let a = gaussian_cloud(200, 2, 0.0, 0.1, &mut rng);
        let biased = mmd_rbf_biased(&a, &a, Some(1.0)).unwrap();
        assert!(biased.value.abs() < 1e-10);
        let unbiased = mmd_rbf(&a, &a, Some(1.0)).unwrap();
        assert!(unbiased.value > -1e-3 && unbiased.value < 1e-3);
    }

    #[test]
    fn mmd_matches_reference_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let a = gaussian_cloud(50, 2, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(70, 2, 1.0, 1.0, &mut rng);
        let ours = mmd_rbf(&a, &b, Some(0.8)).unwrap();
        let naive = reference::naive_mmd_unbiased(&a, &b, 0.8);
        assert!((ours.value - naive).abs() < 1e-12);
        assert_eq!(ours.bandwidth, 0.8);
    }

    #[test]
    fn mmd_median_heuristic_scales_with_the_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let a = gaussian_cloud(40, 2, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(40, 2, 0.0, 1.0, &mut rng);
        let narrow = median_bandwidth(&a, &b).unwrap();
        let scale = |set: &[Vec<f64>]| -> Vec<Vec<f64>> {
            set.iter()
                .map(|p| p.iter().map(|v| 3.0 * v).collect())
                .collect()
        };
        let wide = median_bandwidth(&scale(&a), &scale(&b)).unwrap();
        assert!((wide / narrow - 3.0).abs() < 1e-9);
        let est = mmd_rbf(&a, &b, None).unwrap();
        assert_eq!(est.bandwidth, narrow);
    }

    #[test]
    fn mmd_shrinking_bandwidth_approaches_the_distinct_limit() {
        // All points distinct: as the bandwidth shrinks, every kernel
        // value dies and the discrepancy falls monotonically toward 0.
        let a = vec![vec![0.0], vec![0.1], vec![0.2]];
        let b = vec![vec![10.0], vec![10.1], vec![10.2]];
        let at = |bw: f64| mmd_rbf(&a, &b, Some(bw)).unwrap().value;
        let (m1, m2, m3) = (at(0.2), at(0.05), at(0.0125));
        assert!(m1 > m2 && m2 > m3, "{m1} > {m2} > {m3} expected");
        assert!(m3 >= -1e-12 && m3 < 1e-3);
    }

    #[test]
    fn sliced_single_projection_in_1d_is_exact_w1() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let a = gaussian_cloud(64, 1, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(64, 1, 2.0, 1.0, &mut rng);
        let sw = sliced_wasserstein(&a, &b, 1, &mut rng).unwrap();
        let flat = |s: &[Vec<f64>]| s.iter().map(|p| p[0]).collect::<Vec<f64>>();
        let w1 = reference::naive_w1_equal_1d(&flat(&a), &flat(&b));
        assert!((sw - w1).abs() < 1e-12, "sliced {sw} vs exact {w1}");
    }

    #[test]
    fn sliced_handles_unequal_sizes_by_quantile_matching() {
        // A = {0, 1} and B = {0.5}: the quantile functions differ by 0.5
        // everywhere, so the cost is 0.5 regardless of direction.
        let a = vec![vec![0.0], vec![1.0]];
        let b = vec![vec![0.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let sw = sliced_wasserstein(&a, &b, 4, &mut rng).unwrap();
        assert!((sw - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sliced_identical_sets_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let a = gaussian_cloud(30, 3, 0.0, 1.0, &mut rng);
        assert_eq!(sliced_wasserstein(&a, &a, 16, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn sliced_translation_obeys_the_triangle_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let a = gaussian_cloud(40, 2, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(50, 2, 0.5, 1.2, &mut rng);
        let v = [1.2, -0.7];
        let shifted: Vec<Vec<f64>> = a
            .iter()
            .map(|p| vec![p[0] + v[0], p[1] + v[1]])
            .collect();
        // Same seed, same directions, so the per-projection bound
        // |W1(A + v, B) - W1(A, B)| <= |v . dir| <= |v| averages cleanly.
        let base = sliced_wasserstein(&a, &b, 32, &mut ChaCha8Rng::seed_from_u64(41)).unwrap();
        let moved =
            sliced_wasserstein(&shifted, &b, 32, &mut ChaCha8Rng::seed_from_u64(41)).unwrap();
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!(moved <= base + norm + 1e-9);
    }

    #[test]
    fn knn_self_coverage_is_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = gaussian_cloud(50, 2, 0.0, 1.0, &mut rng);
        let (p, r) = knn_precision_recall(&a, &a, 5).unwrap();
        assert_eq!((p, r), (1.0, 1.0));
    }

    #[test]
    fn knn_single_mode_generator_halves_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut reference_set = gaussian_cloud(100, 2, -5.0, 0.5, &mut rng);
        reference_set.extend(gaussian_cloud(100, 2, 5.0, 0.5, &mut rng));
        let generated = gaussian_cloud(120, 2, -5.0, 0.5, &mut rng);
        let (p, r) = knn_precision_recall(&generated, &reference_set, 5).unwrap();
        assert!(p > 0.9, "precision {p}");
        assert!((0.4..=0.6).contains(&r), "recall {r}");
    }

    #[test]
    fn knn_disjoint_sets_score_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let a = gaussian_cloud(40, 2, 0.0, 0.3, &mut rng);
        let b = gaussian_cloud(40, 2, 50.0, 0.3, &mut rng);
        let (p, r) = knn_precision_recall(&a, &b, 5).unwrap();
        assert_eq!((p, r), (0.0, 0.0));
    }

    #[test]
    fn knn_swapping_roles_swaps_the_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let a = gaussian_cloud(30, 2, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(45, 2, 0.8, 1.0, &mut rng);
        let (p_ab, r_ab) = knn_precision_recall(&a, &b, 4).unwrap();
        let (p_ba, r_ba) = knn_precision_recall(&b, &a, 4).unwrap();
        assert_eq!(p_ab, r_ba);
        assert_eq!(r_ab, p_ba);
    }

    #[test]
    fn knn_rejects_degenerate_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let a = gaussian_cloud(10, 2, 0.0, 1.0, &mut rng);
        let tiny = gaussian_cloud(5, 2, 0.0, 1.0, &mut rng);
        assert!(matches!(
            knn_precision_recall(&a, &a, 0),
            Err(MetricsError::BadParam(_))
        ));
        assert!(matches!(
            knn_precision_recall(&a, &tiny, 5),
            Err(MetricsError::TooFewPoints { n: 5, min: 6 })
        ));
    }

    #[test]
    fn permutation_test_is_calibrated_under_the_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut low = 0;
        for _ in 0..100 {
            let a = gaussian_cloud(24, 1, 0.0, 1.0, &mut rng);
            let b = gaussian_cloud(24, 1, 0.0, 1.0, &mut rng);
            let p = energy_permutation_p(&a, &b, 199, &mut rng).unwrap();
            if p <= 0.01 {
                low += 1;
            }
        }
        assert!(low <= 2, "{low} of 100 null trials scored p <= 0.01");
    }

    #[test]
    fn permutation_test_bottoms_out_on_separated_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let a = gaussian_cloud(20, 1, 0.0, 0.5, &mut rng);
        let b = gaussian_cloud(20, 1, 40.0, 0.5, &mut rng);
        let p = energy_permutation_p(&a, &b, 99, &mut rng).unwrap();
        assert_eq!(p, 1.0 / 100.0);
    }

    #[test]
    fn permutation_test_rejects_zero_permutations() {
        let a = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            energy_permutation_p(&a, &a, 0, &mut ChaCha8Rng::seed_from_u64(49)),
            Err(MetricsError::BadParam(_))
        ));
    }

    #[test]
    fn kde_log_density_matches_direct_sum() {
        let data = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, -1.0]];
        let query = [0.5, 0.2];
        let bw = 0.7f64;
        let direct: f64 = {
            let norm = 1.0 / (2.0 * core::f64::consts::PI * bw * bw);
            let sum: f64 = data
                .iter()
                .map(|x| {
                    let d2: f64 = x
                        .iter()
                        .zip(&query)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    norm * (-d2 / (2.0 * bw * bw)).exp()
                })
                .sum();
            (sum / 3.0).ln()
        };
        let ours = gaussian_kde_log_density(&data, &query, bw).unwrap();
        assert!((ours - direct).abs() < 1e-12);
        let far = gaussian_kde_log_density(&data, &[40.0, 40.0], bw).unwrap();
        assert!(far < ours);
    }

    #[test]
    fn plug_in_bandwidth_shrinks_with_sample_size_and_scales_with_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let small = gaussian_cloud(100, 2, 0.0, 1.0, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let large = gaussian_cloud(1600, 2, 0.0, 1.0, &mut rng);
        let bw_small = silverman_bandwidth(&small).unwrap();
        let bw_large = silverman_bandwidth(&large).unwrap();
        assert!(bw_large < bw_small);
        // Doubling the data doubles the bandwidth exactly.
        let doubled: Vec<Vec<f64>> =
            small.iter().map(|x| x.iter().map(|v| 2.0 * v).collect()).collect();
        let bw_doubled = silverman_bandwidth(&doubled).unwrap();
        assert!((bw_doubled - 2.0 * bw_small).abs() < 1e-12 * bw_small.abs());
        // A constant set has no spread to scale by.
        let flat = vec![vec![3.0, 3.0]; 10];
        assert!(matches!(
            silverman_bandwidth(&flat),
            Err(MetricsError::BadParam(_))
        ));
    }

    #[test]
    fn evaluate_fills_the_whole_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let a = gaussian_cloud(60, 2, 0.0, 1.0, &mut rng);
        let b = gaussian_cloud(80, 2, 0.3, 1.0, &mut rng);
        let config = MetricConfig {
            k: 4,
            n_projections: 16,
            n_perms: Some(49),
            mmd_bandwidth: None,
        };
        let report = evaluate(&a, &b, &config, &mut rng).unwrap();
        assert!(report.energy_distance >= 0.0);
        assert!(report.mmd_bandwidth > 0.0);
        assert!(report.sliced_wasserstein >= 0.0);
        assert!((0.0..=1.0).contains(&report.knn_precision));
        assert!((0.0..=1.0).contains(&report.knn_recall));
        assert_eq!(report.n_projections, 16);
        let p = report.permutation_p.unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_set(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
            proptest::collection::vec(
                proptest::collection::vec(-3.0f64..3.0, 2),
                2..max_n,
            )
        }

        proptest! {
            // The energy distance is symmetric and never meaningfully
            // negative, whatever the sets.
            #[test]
            fn energy_distance_is_a_symmetric_nonnegative_score(
                a in arb_set(16),
                b in arb_set(16),
            ) {
                let ab = energy_distance(&a, &b).unwrap();
                let ba = energy_distance(&b, &a).unwrap();
                prop_assert!(ab >= -1e-12);
                prop_assert!((ab - ba).abs() < 1e-12);
            }
        }
    }
}

//! Synthetic datasets: small 2-D point sets and an 8x8 grayscale glyph
//! set, all deterministic functions of their spec.
//!
//! These stand in for real image corpora at desk scale. Point kinds are
//! 2-D; the raster kind flattens 8x8 patches to 64 coordinates in
//! [0, 1]. Only `class_ring` carries labels.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

/// Dataset construction failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("invalid dataset spec: {0}")]
    BadSpec(&'static str),
}

/// The available synthetic families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Two interleaved half-circles, centered at the origin.
    TwoMoons,
    /// Gaussian blobs evenly spaced on a circle.
    GaussianRing,
    /// A 2-D spiral with radial noise.
    SwissRoll,
    /// The ring blobs with one class label per blob.
    ClassRing,
    /// Noisy 8x8 grayscale glyphs, flattened to 64 values in [0, 1].
    RasterPatterns,
}

impl DatasetKind {
    /// Data dimension this kind generates.
    pub fn dim(self) -> usize {
        match self {
            DatasetKind::RasterPatterns => 64,
            _ => 2,
        }
    }

    /// Whether samples carry class labels.
    pub fn labeled(self) -> bool {
        matches!(self, DatasetKind::ClassRing)
    }

    /// The config-file spelling.
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::GaussianRing => "gaussian_ring",
            DatasetKind::SwissRoll => "swiss_roll",
            DatasetKind::ClassRing => "class_ring",
            DatasetKind::RasterPatterns => "raster_patterns",
        }
    }

    /// Parses the config-file spelling.
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "two_moons" => Some(DatasetKind::TwoMoons),
            "gaussian_ring" => Some(DatasetKind::GaussianRing),
            "swiss_roll" => Some(DatasetKind::SwissRoll),
            "class_ring" => Some(DatasetKind::ClassRing),
            "raster_patterns" => Some(DatasetKind::RasterPatterns),
            _ => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub size: usize,
    /// Additive Gaussian noise scale (per-mode spread for the rings).
    pub noise: f64,
    pub seed: u64,
    /// Blob count for the ring kinds; ignored by the others.
    pub modes: usize,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, size: usize) -> Self {
        DatasetSpec {
            kind,
            size,
            noise: 0.05,
            seed: 0,
            modes: 8,
        }
    }
}

/// A generated sample set, labels present iff the kind is labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

// Ring blobs sit on a circle of this radius.
const RING_RADIUS: f64 = 2.0;

// Four 8x8 glyphs: cross, box outline, main diagonal, and disc.
const GLYPHS: [[u8; 8]; 4] = [
    [0x18, 0x18, 0x18, 0xff, 0xff, 0x18, 0x18, 0x18],
    [0xff, 0x81, 0x81, 0x81, 0x81, 0x81, 0x81, 0xff],
    [0xc0, 0x60, 0x30, 0x18, 0x0c, 0x06, 0x03, 0x01],
    [0x3c, 0x7e, 0xff, 0xff, 0xff, 0xff, 0x7e, 0x3c],
];

fn noise_pair(noise: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    (noise * a, noise * b)
}

/// Generates the dataset described by `spec`. Reruns with the same spec
/// are bitwise identical; the generator never touches global state.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset, DatasetError> {
    if spec.size == 0 {
        return Err(DatasetError::BadSpec("size must be positive"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(DatasetError::BadSpec("noise must be finite and nonnegative"));
    }
    let ring = matches!(spec.kind, DatasetKind::GaussianRing | DatasetKind::ClassRing);
    if ring && spec.modes == 0 {
        return Err(DatasetError::BadSpec("ring needs at least one mode"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.size);
    let mut labels = spec.kind.labeled().then(|| Vec::with_capacity(spec.size));
    for i in 0..spec.size {
        match spec.kind {
            DatasetKind::TwoMoons => {
                let theta = rng.random::<f64>() * PI;
                let (dx, dy) = noise_pair(spec.noise, &mut rng);
                // Alternating moons keep every prefix balanced; the two
                // arcs are point-symmetric about the origin.
                let (x, y) = (theta.cos() - 0.5, theta.sin() - 0.25);
                if i % 2 == 0 {
                    points.push(vec![x + dx, y + dy]);
                } else {
                    points.push(vec![-x + dx, -y + dy]);
                }
            }
            DatasetKind::GaussianRing | DatasetKind::ClassRing => {
                let mode = rng.random_range(0..spec.modes);
                let angle = 2.0 * PI * mode as f64 / spec.modes as f64;
                let (dx, dy) = noise_pair(spec.noise, &mut rng);
                points.push(vec![
                    RING_RADIUS * angle.cos() + dx,
                    RING_RADIUS * angle.sin() + dy,
                ]);
                if let Some(l) = labels.as_mut() {
                    l.push(mode);
                }
            }
            DatasetKind::SwissRoll => {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                let (dx, dy) = noise_pair(spec.noise, &mut rng);
                points.push(vec![0.25 * t * t.cos() + dx, 0.25 * t * t.sin() + dy]);
            }
            DatasetKind::RasterPatterns => {
                let glyph = &GLYPHS[rng.random_range(0..GLYPHS.len())];
                let mut pixels = Vec::with_capacity(64);
                for row in glyph {
                    for bit in (0..8).rev() {
                        let on = (row >> bit) & 1 == 1;
                        let base = if on { 0.9 } else { 0.1 };
                        let xi: f64 = rng.sample(StandardNormal);
                        pixels.push((base + spec.noise * xi).clamp(0.0, 1.0));
                    }
                }
                points.push(pixels);
            }
        }
    }
    Ok(Dataset { points, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: DatasetKind, size: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            seed,
            ..DatasetSpec::new(kind, size)
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        for kind in [
            DatasetKind::TwoMoons,
            DatasetKind::GaussianRing,
            DatasetKind::SwissRoll,
            DatasetKind::ClassRing,
            DatasetKind::RasterPatterns,
        ] {
            let a = make_dataset(&spec(kind, 200, 7)).unwrap();
            let b = make_dataset(&spec(kind, 200, 7)).unwrap();
            assert_eq!(a, b, "{kind} not reproducible");
        }
    }

    #[test]
    fn dimensions_match_the_kind() {
        for kind in [
            DatasetKind::TwoMoons,
            DatasetKind::GaussianRing,
            DatasetKind::SwissRoll,
            DatasetKind::ClassRing,
            DatasetKind::RasterPatterns,
        ] {
            let data = make_dataset(&spec(kind, 16, 1)).unwrap();
            assert_eq!(data.points.len(), 16);
            assert!(data.points.iter().all(|p| p.len() == kind.dim()));
        }
    }

    #[test]
    fn labels_present_exactly_for_the_labeled_kind() {
        for kind in [
            DatasetKind::TwoMoons,
            DatasetKind::GaussianRing,
            DatasetKind::SwissRoll,
            DatasetKind::ClassRing,
            DatasetKind::RasterPatterns,
        ] {
            let data = make_dataset(&spec(kind, 8, 2)).unwrap();
            assert_eq!(data.labels.is_some(), kind.labeled());
        }
        let labeled = make_dataset(&spec(DatasetKind::ClassRing, 500, 3)).unwrap();
        let labels = labeled.labels.unwrap();
        assert_eq!(labels.len(), 500);
        assert!(labels.iter().all(|&l| l < 8));
    }

    #[test]
    fn ring_mode_counts_stay_within_the_multinomial_bound() {
        let mut s = spec(DatasetKind::GaussianRing, 8000, 11);
        s.noise = 0.05;
        let data = make_dataset(&s).unwrap();
        // Assign each point to its nearest mode center and count.
        let mut counts = [0usize; 8];
        for p in &data.points {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in counts.iter().enumerate().map(|(k, _)| {
                let a = 2.0 * PI * k as f64 / 8.0;
                (k, (RING_RADIUS * a.cos(), RING_RADIUS * a.sin()))
            }) {
                let d = (p[0] - c.0).powi(2) + (p[1] - c.1).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            counts[best] += 1;
        }
        let expected = 1000.0;
        let sd = (8000.0_f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for (k, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - expected).abs();
            assert!(dev <= 4.0 * sd, "mode {k} count {c} is {dev:.0} off");
        }
    }

    #[test]
    fn class_ring_labels_point_at_their_own_blob() {
        let mut s = spec(DatasetKind::ClassRing, 400, 5);
        s.modes = 4;
        s.noise = 0.1;
        let data = make_dataset(&s).unwrap();
        let labels = data.labels.unwrap();
        for (p, &l) in data.points.iter().zip(&labels) {
            let a = 2.0 * PI * l as f64 / 4.0;
            let d = ((p[0] - RING_RADIUS * a.cos()).powi(2)
                + (p[1] - RING_RADIUS * a.sin()).powi(2))
            .sqrt();
            assert!(d < 1.0, "label {l} but distance {d:.2} to its center");
        }
    }

    #[test]
    fn raster_values_stay_in_the_unit_interval() {
        let mut s = spec(DatasetKind::RasterPatterns, 64, 9);
        s.noise = 0.3;
        let data = make_dataset(&s).unwrap();
        for p in &data.points {
            assert_eq!(p.len(), 64);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn two_moons_is_centered_and_bounded() {
        let mut s = spec(DatasetKind::TwoMoons, 4000, 13);
        s.noise = 0.05;
        let data = make_dataset(&s).unwrap();
        let n = data.points.len() as f64;
        let mean_x: f64 = data.points.iter().map(|p| p[0]).sum::<f64>() / n;
        let mean_y: f64 = data.points.iter().map(|p| p[1]).sum::<f64>() / n;
        assert!(mean_x.abs() < 0.1 && mean_y.abs() < 0.1);
        assert!(data
            .points
            .iter()
            .all(|p| p[0].abs() < 2.0 && p[1].abs() < 1.6));
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(matches!(
            make_dataset(&spec(DatasetKind::TwoMoons, 0, 0)),
            Err(DatasetError::BadSpec(_))
        ));
        let mut s = spec(DatasetKind::GaussianRing, 10, 0);
        s.modes = 0;
        assert!(matches!(make_dataset(&s), Err(DatasetError::BadSpec(_))));
        let mut s = spec(DatasetKind::SwissRoll, 10, 0);
        s.noise = f64::NAN;
        assert!(matches!(make_dataset(&s), Err(DatasetError::BadSpec(_))));
    }
}

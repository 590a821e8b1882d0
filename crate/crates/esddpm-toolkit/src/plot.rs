//! Write-only plots for human inspection: SVG scatter for 2-D sets and
//! portable-graymap montages for raster samples.
//!
//! Both writers are pure functions of their inputs, so files are
//! deterministic and safe to diff. Nothing in the engine ever reads
//! them back.

use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Plot emission failures.
#[derive(Debug, Error)]
pub enum PlotError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad plot input: {0}")]
    BadInput(&'static str),
}

/// One scatter layer: a point set and its fill color.
#[derive(Debug, Clone)]
pub struct ScatterSet<'a> {
    pub points: &'a [Vec<f64>],
    /// Any SVG color, e.g. `"#1f77b4"` or `"crimson"`.
    pub color: &'a str,
}

const VIEW: f64 = 600.0;
const MARGIN: f64 = 40.0;

/// Renders 2-D point sets into one SVG scatter plot. Empty input
/// produces a valid file with an empty plot region.
pub fn scatter_svg(sets: &[ScatterSet<'_>], path: &Path) -> Result<(), PlotError> {
    for set in sets {
        for p in set.points {
            if p.len() != 2 {
                return Err(PlotError::BadInput("scatter points must be 2-D"));
            }
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(PlotError::BadInput("scatter points must be finite"));
            }
        }
    }
    // Shared bounds over all layers, padded; a degenerate or empty
    // range falls back to the unit box.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for set in sets {
        for p in set.points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    for a in 0..2 {
        if !(lo[a] < hi[a]) {
            lo[a] = -1.0;
            hi[a] = 1.0;
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = (VIEW - 2.0 * MARGIN) / span;
    let to_px = |p: &[f64]| {
        let x = MARGIN + (p[0] - lo[0]) * scale;
        let y = VIEW - MARGIN - (p[1] - lo[1]) * scale;
        (x, y)
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{VIEW}\" height=\"{VIEW}\" \
         viewBox=\"0 0 {VIEW} {VIEW}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect width=\"{VIEW}\" height=\"{VIEW}\" fill=\"white\" stroke=\"#ccc\"/>"
    );
    for set in sets {
        for p in set.points {
            let (x, y) = to_px(p);
            let _ = writeln!(
                svg,
                "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.7\"/>",
                set.color
            );
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Renders flattened square grayscale samples (values in [0, 1],
/// `side * side` long) into one ASCII portable graymap, one tile per
/// sample with a 1-pixel black separator grid.
pub fn pgm_montage(samples: &[Vec<f64>], side: usize, path: &Path) -> Result<(), PlotError> {
    if side == 0 {
        return Err(PlotError::BadInput("tile side must be positive"));
    }
    for s in samples {
        if s.len() != side * side {
            return Err(PlotError::BadInput("sample length must be side squared"));
        }
    }
    let k = samples.len();
    let cols = (k as f64).sqrt().ceil() as usize;
    let rows = if cols == 0 { 0 } else { k.div_ceil(cols) };
    let width = if k == 0 { 1 } else { cols * (side + 1) + 1 };
    let height = if k == 0 { 1 } else { rows * (side + 1) + 1 };
    let mut pixels = vec![0u8; width * height];
    if k == 0 {
        pixels[0] = 255;
    }
    for (i, sample) in samples.iter().enumerate() {
        let tile_x = (i % cols) * (side + 1) + 1;
        let tile_y = (i / cols) * (side + 1) + 1;
        for (j, &v) in sample.iter().enumerate() {
            let x = tile_x + j % side;
            let y = tile_y + j / side;
            pixels[y * width + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

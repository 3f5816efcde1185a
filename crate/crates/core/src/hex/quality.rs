use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{HexMesh, Vec3, HEX_CORNER_NEIGHBORS};

pub const HISTOGRAM_BINS: usize = 40;
const BIN_WIDTH: f64 = 2.0 / HISTOGRAM_BINS as f64;

/// Scaled-Jacobian summary of a hex mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub per_hex: Vec<f64>,
    /// Counts over `[-1, 1]` in bins of width 0.05.
    pub histogram: Vec<usize>,
    pub min: f64,
    pub mean: f64,
    /// Hexes with a negative corner value.
    pub inverted: usize,
    /// Hexes with a zero-length edge.
    pub degenerate: usize,
}

impl QualityReport {
    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Text rendering of the histogram, one line per non-empty bin.
    pub fn render_histogram(&self) -> String {
        let peak = self.histogram.iter().copied().max().unwrap_or(0).max(1);
        let mut out = String::new();
        for (i, &c) in self.histogram.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let lo = -1.0 + i as f64 * BIN_WIDTH;
            let bar = "#".repeat((c * 50).div_ceil(peak));
            out.push_str(&format!("[{lo:+.2}, {:+.2}) {c:>8} {bar}\n", lo + BIN_WIDTH));
        }
        out
    }
}

/// Scaled Jacobian at corner `c`; `None` when an emanating edge has zero
/// length.
pub fn corner_scaled_jacobian(p: &[Vec3; 8], c: usize) -> Option<f64> {
    let [a, b, d] = HEX_CORNER_NEIGHBORS[c].map(|o| p[o] - p[c]);
    let (la, lb, ld) = (a.norm(), b.norm(), d.norm());
    if la == 0.0 || lb == 0.0 || ld == 0.0 {
        return None;
    }
    Some(a.dot(&b.cross(&d)) / (la * lb * ld))
}

/// Minimum corner value of one hex and whether it is degenerate.
pub fn hex_scaled_jacobian(p: &[Vec3; 8]) -> (f64, bool) {
    let mut min = f64::INFINITY;
    let mut degenerate = false;
    for c in 0..8 {
        match corner_scaled_jacobian(p, c) {
            Some(v) => min = min.min(v),
            None => {
                degenerate = true;
                min = min.min(0.0);
            }
        }
    }
    (min, degenerate)
}

pub(crate) fn hex_points(mesh: &HexMesh, h: usize) -> [Vec3; 8] {
    mesh.hexes[h].map(|v| mesh.vertices[v])
}

fn bin(v: f64) -> usize {
    (((v + 1.0) / BIN_WIDTH).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn scaled_jacobian(mesh: &HexMesh) -> QualityReport {
    let per: Vec<(f64, bool)> = (0..mesh.hexes.len())
        .into_par_iter()
        .map(|h| hex_scaled_jacobian(&hex_points(mesh, h)))
        .collect();
    let mut histogram = vec![0; HISTOGRAM_BINS];
    let (mut min, mut sum, mut inverted, mut degenerate) = (f64::INFINITY, 0.0, 0, 0);
    for &(v, d) in &per {
        histogram[bin(v)] += 1;
        min = min.min(v);
        sum += v;
        inverted += (v < 0.0) as usize;
        degenerate += d as usize;
    }
    QualityReport {
        mean: if per.is_empty() { 0.0 } else { sum / per.len() as f64 },
        per_hex: per.into_iter().map(|p| p.0).collect(),
        histogram,
        min,
        inverted,
        degenerate,
    }
}

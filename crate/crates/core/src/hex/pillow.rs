use std::collections::BTreeMap;

use super::quality::scaled_jacobian;
use crate::error::{Error, Result};
use crate::geom::{HexMesh, Vec3};

pub const DEFAULT_PILLOW_FRACTION: f64 = 0.3;
const PILLOW_RETRIES: usize = 3;

/// Inserts one boundary sheet of hexes with the default offset fraction.
pub fn pillow_boundary(mesh: &HexMesh) -> Result<HexMesh> {
    pillow_boundary_with(mesh, DEFAULT_PILLOW_FRACTION)
}

/// Duplicates the boundary vertices, offsets the copies inward by
/// `fraction` of the mean incident boundary edge length, re-attaches the
/// original hexes to the copies and fills the gap with one hex per boundary
/// quad. The fraction is halved on inverted output, up to three times.
pub fn pillow_boundary_with(mesh: &HexMesh, fraction: f64) -> Result<HexMesh> {
    mesh.check_closed_boundary()
        .map_err(|e| Error::Pillow(format!("boundary is not a closed manifold: {e}")))?;
    let quads = mesh.boundary_quads();
    let mut normal: BTreeMap<usize, Vec3> = BTreeMap::new();
    let mut edge_len: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for q in &quads {
        let p = q.map(|v| mesh.vertices[v]);
        let n = (p[2] - p[0]).cross(&(p[3] - p[1]));
        for k in 0..4 {
            *normal.entry(q[k]).or_insert_with(Vec3::zeros) += n;
            let l = (p[(k + 1) % 4] - p[k]).norm();
            for v in [q[k], q[(k + 1) % 4]] {
                let e = edge_len.entry(v).or_insert((0.0, 0));
                e.0 += l;
                e.1 += 1;
            }
        }
    }

    let mut f = fraction;
    let mut last = String::new();
    for _ in 0..=PILLOW_RETRIES {
        let mut vertices = mesh.vertices.clone();
        let mut copy = BTreeMap::new();
        for (&v, n) in &normal {
            let (sum, count) = edge_len[&v];
            let len = n.norm();
            if !(len > 0.0) {
                return Err(Error::Pillow(format!("vertex {v} has no boundary normal")));
            }
            vertices.push(mesh.vertices[v] - n / len * (f * sum / count as f64));
            copy.insert(v, vertices.len() - 1);
        }
        let mut hexes: Vec<[usize; 8]> = mesh
            .hexes
            .iter()
            .map(|h| h.map(|v| copy.get(&v).copied().unwrap_or(v)))
            .collect();
        for q in &quads {
            let inner = q.map(|v| copy[&v]);
            hexes.push([inner[0], inner[1], inner[2], inner[3], q[0], q[1], q[2], q[3]]);
        }
        let out = HexMesh { vertices, hexes };
        let report = scaled_jacobian(&out);
        if report.inverted == 0 && report.min > 0.0 {
            return Ok(out);
        }
        last = format!("offset fraction {f} left {} inverted hexes (min {:.3})", report.inverted, report.min);
        f *= 0.5;
    }
    Err(Error::Pillow(last))
}

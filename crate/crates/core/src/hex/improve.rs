use std::collections::BTreeSet;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quality::{corner_scaled_jacobian, hex_points, hex_scaled_jacobian, scaled_jacobian, QualityReport};
use crate::error::Result;
use crate::geom::{HexMesh, TriMesh, Vec3, HEX_CORNER_NEIGHBORS};

/// Weights and caps for [`improve_quality`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImproveConfig {
    pub w_fit: f64,
    pub w_shape: f64,
    pub outer_iterations: usize,
    pub descent_steps: usize,
    pub target_min_sj: f64,
    /// Boundary vertices whose incident quads bend more than this stay put.
    pub feature_angle_deg: f64,
}

impl Default for ImproveConfig {
    fn default() -> Self {
        ImproveConfig {
            w_fit: 1.0,
            w_shape: 0.1,
            outer_iterations: 10,
            descent_steps: 4,
            target_min_sj: 0.2,
            feature_angle_deg: 30.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ImproveOutcome {
    pub mesh: HexMesh,
    pub report: QualityReport,
    /// Global minimum scaled Jacobian before the first and after every
    /// accepted outer iteration.
    pub history: Vec<f64>,
    pub reached_target: bool,
}

struct Topology {
    vert_hexes: Vec<Vec<usize>>,
    nbrs: Vec<Vec<usize>>,
    boundary: Vec<bool>,
    boundary_nbrs: Vec<Vec<usize>>,
    feature: Vec<bool>,
    mean_edge: f64,
}

impl Topology {
    fn new(mesh: &HexMesh, feature_angle_deg: f64) -> Self {
        let n = mesh.vertices.len();
        let mut vert_hexes = vec![Vec::new(); n];
        let mut edges = BTreeSet::new();
        for (i, h) in mesh.hexes.iter().enumerate() {
            for c in 0..8 {
                vert_hexes[h[c]].push(i);
                for &o in &HEX_CORNER_NEIGHBORS[c] {
                    edges.insert((h[c].min(h[o]), h[c].max(h[o])));
                }
            }
        }
        let mut nbrs = vec![Vec::new(); n];
        let mut total = 0.0;
        for &(a, b) in &edges {
            nbrs[a].push(b);
            nbrs[b].push(a);
            total += (mesh.vertices[a] - mesh.vertices[b]).norm();
        }
        let quads = mesh.boundary_quads();
        let mut boundary = vec![false; n];
        let mut bset = vec![BTreeSet::new(); n];
        let mut normals: Vec<Vec<Vec3>> = vec![Vec::new(); n];
        for q in &quads {
            let p = q.map(|v| mesh.vertices[v]);
            let nq = (p[2] - p[0]).cross(&(p[3] - p[1])).normalize();
            for k in 0..4 {
                boundary[q[k]] = true;
                bset[q[k]].insert(q[(k + 1) % 4]);
                bset[q[k]].insert(q[(k + 3) % 4]);
                normals[q[k]].push(nq);
            }
        }
        let cos_limit = feature_angle_deg.to_radians().cos();
        let feature = normals
            .iter()
            .map(|ns| ns.iter().any(|a| ns.iter().any(|b| a.dot(b) < cos_limit)))
            .collect();
        Topology {
            vert_hexes,
            nbrs,
            boundary,
            boundary_nbrs: bset.into_iter().map(|s| s.into_iter().collect()).collect(),
            feature,
            mean_edge: if edges.is_empty() { 1.0 } else { total / edges.len() as f64 },
        }
    }

    fn movable(&self, v: usize) -> bool {
        !self.boundary[v] || !self.feature[v]
    }
}

fn hex_min(mesh: &HexMesh, h: usize) -> f64 {
    hex_scaled_jacobian(&hex_points(mesh, h)).0
}

fn local_min(mesh: &HexMesh, topo: &Topology, v: usize) -> f64 {
    topo.vert_hexes[v].iter().map(|&h| hex_min(mesh, h)).fold(f64::INFINITY, f64::min)
}

fn global_min(mesh: &HexMesh) -> f64 {
    (0..mesh.hexes.len())
        .into_par_iter()
        .map(|h| hex_min(mesh, h))
        .reduce(|| f64::INFINITY, f64::min)
}

fn shape_energy(mesh: &HexMesh, h: usize) -> f64 {
    corner_energy(&hex_points(mesh, h))
}

fn corner_energy(p: &[Vec3; 8]) -> f64 {
    (0..8)
        .map(|c| (1.0 - corner_scaled_jacobian(p, c).unwrap_or(0.0)).powi(2))
        .sum()
}

struct Energy<'a> {
    surface: &'a TriMesh,
    cfg: &'a ImproveConfig,
}

impl Energy<'_> {
    fn fit(&self, p: &Vec3) -> f64 {
        self.cfg.w_fit * self.surface.closest_point(p).1.powi(2)
    }

    fn total(&self, mesh: &HexMesh, topo: &Topology) -> f64 {
        // collected before summing so the reduction order is fixed
        let shape: Vec<f64> = (0..mesh.hexes.len()).into_par_iter().map(|h| shape_energy(mesh, h)).collect();
        let fit: Vec<f64> = (0..mesh.vertices.len())
            .into_par_iter()
            .filter(|&v| topo.boundary[v])
            .map(|v| self.fit(&mesh.vertices[v]))
            .collect();
        let (shape, fit): (f64, f64) = (shape.iter().sum(), fit.iter().sum());
        fit + self.cfg.w_shape * shape
    }

    /// Terms of the energy that depend on vertex `v`, evaluated with `v`
    /// placed at `at`.
    fn local(&self, mesh: &HexMesh, topo: &Topology, v: usize, at: Vec3) -> f64 {
        let shape: f64 = topo.vert_hexes[v]
            .iter()
            .map(|&h| corner_energy(&mesh.hexes[h].map(|u| if u == v { at } else { mesh.vertices[u] })))
            .sum();
        let fit = if topo.boundary[v] { self.fit(&at) } else { 0.0 };
        fit + self.cfg.w_shape * shape
    }
}

/// Moves `v` to `target` and keeps the move only if the smallest scaled
/// Jacobian among its hexes does not drop.
fn try_move(mesh: &mut HexMesh, topo: &Topology, v: usize, target: Vec3) -> bool {
    let before = local_min(mesh, topo, v);
    let old = std::mem::replace(&mut mesh.vertices[v], target);
    if local_min(mesh, topo, v) >= before {
        true
    } else {
        mesh.vertices[v] = old;
        false
    }
}

fn smooth_interior(mesh: &mut HexMesh, topo: &Topology) {
    for v in 0..mesh.vertices.len() {
        if topo.boundary[v] || topo.nbrs[v].is_empty() {
            continue;
        }
        let avg = topo.nbrs[v].iter().map(|&o| mesh.vertices[o]).sum::<Vec3>() / topo.nbrs[v].len() as f64;
        try_move(mesh, topo, v, avg);
    }
}

fn smooth_boundary(mesh: &mut HexMesh, topo: &Topology, surface: &TriMesh) {
    for v in 0..mesh.vertices.len() {
        if !topo.boundary[v] || topo.feature[v] || topo.boundary_nbrs[v].is_empty() {
            continue;
        }
        let nb = &topo.boundary_nbrs[v];
        let avg = nb.iter().map(|&o| mesh.vertices[o]).sum::<Vec3>() / nb.len() as f64;
        if !try_move(mesh, topo, v, surface.closest_point(&avg).0) {
            let here = surface.closest_point(&mesh.vertices[v]).0;
            try_move(mesh, topo, v, here);
        }
    }
}

/// Backtracking descent along the finite-difference gradient; a step is
/// kept only if it lowers the energy without lowering the global minimum.
fn descend(mesh: &mut HexMesh, topo: &Topology, energy: &Energy, steps: usize) {
    let delta = 1e-5 * topo.mean_edge;
    let movable: Vec<usize> = (0..mesh.vertices.len()).filter(|&v| topo.movable(v)).collect();
    for _ in 0..steps {
        let grads: Vec<Vec3> = movable
            .par_iter()
            .map(|&v| {
                let x = mesh.vertices[v];
                Vec3::from_fn(|a, _| {
                    let mut d = Vec3::zeros();
                    d[a] = delta;
                    (energy.local(mesh, topo, v, x + d) - energy.local(mesh, topo, v, x - d)) / (2.0 * delta)
                })
            })
            .collect();
        let gmax = grads.iter().map(|g| g.norm()).fold(0.0, f64::max);
        if !(gmax > 1e-12) {
            return;
        }
        let e0 = energy.total(mesh, topo);
        let m0 = global_min(mesh);
        let mut alpha = 0.05 * topo.mean_edge / gmax;
        let mut accepted = false;
        for _ in 0..10 {
            let mut trial = mesh.clone();
            for (&v, g) in movable.iter().zip(&grads) {
                trial.vertices[v] -= g * alpha;
            }
            if energy.total(&trial, topo) < e0 && global_min(&trial) >= m0 {
                *mesh = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

/// Alternates interior smoothing, gradient descent on the fit + shape
/// energy and projected boundary smoothing. Outer iterations that would
/// lower the global minimum scaled Jacobian are rolled back.
pub fn improve_quality(mesh: &HexMesh, surface: &TriMesh, cfg: &ImproveConfig) -> Result<ImproveOutcome> {
    let topo = Topology::new(mesh, cfg.feature_angle_deg);
    let energy = Energy { surface, cfg };
    let mut cur = mesh.clone();
    let mut best = global_min(&cur);
    let mut history = vec![best];
    for _ in 0..cfg.outer_iterations {
        let mut next = cur.clone();
        smooth_interior(&mut next, &topo);
        descend(&mut next, &topo, &energy, cfg.descent_steps);
        smooth_boundary(&mut next, &topo, surface);
        let m = global_min(&next);
        if m < best {
            break;
        }
        let moved = next
            .vertices
            .iter()
            .zip(&cur.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        cur = next;
        best = m;
        history.push(m);
        if moved < 1e-12 * topo.mean_edge {
            break;
        }
    }
    let report = scaled_jacobian(&cur);
    let reached_target = report.min >= cfg.target_min_sj && report.inverted == 0;
    if !reached_target {
        warn!(
            "quality target {} not reached: min scaled Jacobian {:.4}, {} inverted",
            cfg.target_min_sj, report.min, report.inverted
        );
    }
    Ok(ImproveOutcome {
        mesh: cur,
        report,
        history,
        reached_target,
    })
}

//! Regularization of diffusion output into an exact axis-aligned polycube.
//!
//! Cuboids are unit cells of an integer lattice `{origin + h * k}`. A complex
//! read from JSON may list larger boxes; every query that needs cells expands
//! them first.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, TriMesh, Vec3, VoxelGrid};

/// Default plane-clustering tolerance in frame units.
pub const DEFAULT_SNAP_TOL: f64 = 0.04;
/// Default smoothing iteration count.
pub const DEFAULT_SMOOTH_ITERATIONS: usize = 50;
/// Planes carrying less than this fraction of the surface area are dropped.
const MIN_PLANE_SUPPORT: f64 = 0.01;
const SMOOTH_STEP: f64 = 0.5;
const MAX_STEP_HALVINGS: usize = 12;

/// Integer box `[min, max)` on the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cuboid {
    pub min: [i64; 3],
    pub max: [i64; 3],
}

impl Cuboid {
    pub fn unit(c: [i64; 3]) -> Self {
        Cuboid {
            min: c,
            max: [c[0] + 1, c[1] + 1, c[2] + 1],
        }
    }

    fn cells(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        (self.min[2]..self.max[2])
            .flat_map(move |z| (self.min[1]..self.max[1]).flat_map(move |y| (self.min[0]..self.max[0]).map(move |x| [x, y, z])))
    }

    fn overlaps(&self, o: &Cuboid) -> bool {
        (0..3).all(|a| self.min[a] < o.max[a] && o.min[a] < self.max[a])
    }
}

/// Boundary unit square on lattice plane `layer` of `axis`, covering
/// `[cell[u], cell[u]+1] x [cell[v], cell[v]+1]` with `u = axis+1`,
/// `v = axis+2` (mod 3). `sign` is the outward direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Facet {
    pub axis: usize,
    pub sign: i8,
    pub layer: i64,
    pub cell: [i64; 3],
}

impl Facet {
    pub fn tangent_axes(&self) -> (usize, usize) {
        ((self.axis + 1) % 3, (self.axis + 2) % 3)
    }

    /// Lattice point at local coordinates `(s, t)` in `{0,1}^2`.
    pub fn lattice_point(&self, s: i64, t: i64) -> [i64; 3] {
        let (u, v) = self.tangent_axes();
        let mut k = self.cell;
        k[self.axis] = self.layer;
        k[u] += s;
        k[v] += t;
        k
    }

    /// Local corner coordinates, counter-clockwise seen from outside.
    pub fn corner_params(&self) -> [[f64; 2]; 4] {
        if self.sign > 0 {
            [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
        } else {
            [[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]
        }
    }

    /// Corner lattice points in the order of [`Facet::corner_params`].
    pub fn corner_keys(&self) -> [[i64; 3]; 4] {
        self.corner_params().map(|[s, t]| self.lattice_point(s as i64, t as i64))
    }

    pub fn normal(&self) -> Vec3 {
        let mut n = Vec3::zeros();
        n[self.axis] = self.sign as f64;
        n
    }
}

/// Axis-aligned polycube on the lattice `origin + h * k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolycubeComplex {
    pub h: f64,
    #[serde(default)]
    pub origin: [f64; 3],
    pub cuboids: Vec<Cuboid>,
}

impl PolycubeComplex {
    pub fn new(h: f64, origin: [f64; 3], cuboids: Vec<Cuboid>) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Snap(format!("lattice unit {h} must be positive")));
        }
        if let Some(c) = cuboids.iter().find(|c| (0..3).any(|a| c.min[a] >= c.max[a])) {
            return Err(Error::Snap(format!("empty cuboid {:?}..{:?}", c.min, c.max)));
        }
        Ok(PolycubeComplex { h, origin, cuboids })
    }

    pub fn unit_cube() -> Self {
        PolycubeComplex {
            h: 1.0,
            origin: [0.0; 3],
            cuboids: vec![Cuboid::unit([0, 0, 0])],
        }
    }

    pub fn from_cells(h: f64, origin: [f64; 3], cells: impl IntoIterator<Item = [i64; 3]>) -> Result<Self> {
        let set: BTreeSet<[i64; 3]> = cells.into_iter().collect();
        Self::new(h, origin, set.into_iter().map(Cuboid::unit).collect())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let pc: PolycubeComplex = serde_json::from_str(&s)?;
        Self::new(pc.h, pc.origin, pc.cuboids)
    }

    pub fn world(&self, k: [f64; 3]) -> Vec3 {
        Vec3::new(
            self.origin[0] + self.h * k[0],
            self.origin[1] + self.h * k[1],
            self.origin[2] + self.h * k[2],
        )
    }

    pub fn world_key(&self, k: [i64; 3]) -> Vec3 {
        self.world(k.map(|v| v as f64))
    }

    /// Union of all cuboids as unit cells.
    pub fn unit_cells(&self) -> BTreeSet<[i64; 3]> {
        self.cuboids.iter().flat_map(|c| c.cells().collect::<Vec<_>>()).collect()
    }

    /// Boundary unit faces in deterministic order.
    pub fn facets(&self) -> Vec<Facet> {
        let cells = self.unit_cells();
        let mut out = Vec::new();
        for c in &cells {
            for axis in 0..3 {
                for sign in [-1i8, 1] {
                    let mut n = *c;
                    n[axis] += sign as i64;
                    if !cells.contains(&n) {
                        let layer = if sign > 0 { c[axis] + 1 } else { c[axis] };
                        out.push(Facet {
                            axis,
                            sign,
                            layer,
                            cell: *c,
                        });
                    }
                }
            }
        }
        out
    }

    /// Facets sharing a lattice edge, as sorted neighbor lists.
    pub fn facet_adjacency(&self, facets: &[Facet]) -> Vec<Vec<usize>> {
        let mut by_edge: HashMap<([i64; 3], [i64; 3]), Vec<usize>> = HashMap::new();
        for (i, f) in facets.iter().enumerate() {
            let k = f.corner_keys();
            for e in 0..4 {
                let (a, b) = (k[e], k[(e + 1) % 4]);
                by_edge.entry((a.min(b), a.max(b))).or_default().push(i);
            }
        }
        let mut adj = vec![BTreeSet::new(); facets.len()];
        for list in by_edge.values() {
            for &a in list {
                for &b in list {
                    if a != b {
                        adj[a].insert(b);
                    }
                }
            }
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Lattice-index bounding range `(min, max)`.
    pub fn lattice_bounds(&self) -> Option<([i64; 3], [i64; 3])> {
        let mut it = self.cuboids.iter();
        let first = it.next()?;
        let (mut lo, mut hi) = (first.min, first.max);
        for c in it {
            for a in 0..3 {
                lo[a] = lo[a].min(c.min[a]);
                hi[a] = hi[a].max(c.max[a]);
            }
        }
        Some((lo, hi))
    }

    pub fn bbox(&self) -> Option<Aabb> {
        let (lo, hi) = self.lattice_bounds()?;
        Some(Aabb {
            min: self.world_key(lo),
            max: self.world_key(hi),
        })
    }

    /// Occupancy grid over the lattice bounds in world coordinates.
    pub fn voxel_grid(&self) -> Option<VoxelGrid> {
        let (lo, hi) = self.lattice_bounds()?;
        let dims = [0, 1, 2].map(|a| (hi[a] - lo[a]) as usize);
        let size = Vec3::from_fn(|a, _| self.h * dims[a] as f64);
        let mut grid = VoxelGrid::uniform(self.world_key(lo), size, dims);
        for c in self.unit_cells() {
            grid.set([0, 1, 2].map(|a| (c[a] - lo[a]) as usize), true);
        }
        Some(grid)
    }

    /// Triangulated boundary with each facet split into `subdiv^2` quads.
    pub fn boundary_mesh(&self, subdiv: usize) -> TriMesh {
        self.voxel_grid().map(|g| g.boundary_mesh(subdiv)).unwrap_or(TriMesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
        })
    }

    /// Closest point on facet `f` and its local `(s, t)` in `[0,1]^2`.
    pub fn project_to_facet(&self, f: &Facet, p: &Vec3) -> (Vec3, [f64; 2]) {
        let (u, v) = f.tangent_axes();
        let local = |a: usize| (p[a] - self.origin[a]) / self.h - f.cell[a] as f64;
        let s = local(u).clamp(0.0, 1.0);
        let t = local(v).clamp(0.0, 1.0);
        (self.facet_point(f, [s, t]), [s, t])
    }

    pub fn facet_point(&self, f: &Facet, st: [f64; 2]) -> Vec3 {
        let (u, v) = f.tangent_axes();
        let mut k = [0.0; 3];
        k[f.axis] = f.layer as f64;
        k[u] = f.cell[u] as f64 + st[0];
        k[v] = f.cell[v] as f64 + st[1];
        self.world(k)
    }
}

/// Per-vertex owning facet, local facet coordinates and projected position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexFacetAssignment {
    pub facet: Vec<usize>,
    pub uv: Vec<[f64; 2]>,
    pub position: Vec<Vec3>,
    /// Positions the assignment was computed from (diffused coordinates).
    pub source: Vec<Vec3>,
}

fn check_topology(points: &[Vec3], topology: &TriMesh) -> Result<()> {
    if topology.vertices.len() != points.len() {
        return Err(Error::InvalidMesh(format!(
            "{} positions for a topology with {} vertices",
            points.len(),
            topology.vertices.len()
        )));
    }
    if topology.triangles.iter().flatten().any(|&v| v >= points.len()) {
        return Err(Error::InvalidMesh("triangle index out of range".into()));
    }
    Ok(())
}

/// Sum of squared edge lengths.
pub fn laplacian_energy(points: &[Vec3], topology: &TriMesh) -> f64 {
    topology
        .edges()
        .iter()
        .map(|&(a, b)| (points[a] - points[b]).norm_squared())
        .sum()
}

fn enclosed_volume(points: &[Vec3], topology: &TriMesh) -> f64 {
    topology
        .triangles
        .iter()
        .map(|t| points[t[0]].dot(&points[t[1]].cross(&points[t[2]])))
        .sum::<f64>()
        / 6.0
}

/// Uniform Laplacian smoothing; after every sweep the shape is rescaled
/// about its vertex centroid so the enclosed volume matches the input.
/// Stops early once no sweep lowers the edge energy at fixed volume.
pub fn volume_preserving_smooth(points: &[Vec3], topology: &TriMesh, iterations: usize) -> Result<Vec<Vec3>> {
    check_topology(points, topology)?;
    let target = enclosed_volume(points, topology);
    if iterations == 0 {
        return Ok(points.to_vec());
    }
    if !(target.abs() > f64::EPSILON) {
        return Err(Error::ZeroVolume);
    }
    let adj = topology.vertex_neighbors();
    let mut cur = points.to_vec();
    let mut energy = laplacian_energy(&cur, topology);
    for _ in 0..iterations {
        // Rescaling can undo part of the sweep's energy drop, so the step
        // is halved until the rescaled shape does not raise the energy.
        let mut step = SMOOTH_STEP;
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let candidate = smooth_sweep(&cur, &adj, step, topology, target)?;
            let e = laplacian_energy(&candidate, topology);
            if e <= energy {
                accepted = Some((candidate, e));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((next, e)) => {
                cur = next;
                energy = e;
            }
            None => break,
        }
    }
    Ok(cur)
}

fn smooth_sweep(cur: &[Vec3], adj: &[Vec<usize>], step: f64, topology: &TriMesh, target: f64) -> Result<Vec<Vec3>> {
    let next: Vec<Vec3> = (0..cur.len())
        .map(|i| {
            if adj[i].is_empty() {
                return cur[i];
            }
            let avg = adj[i].iter().map(|&j| cur[j]).sum::<Vec3>() / adj[i].len() as f64;
            cur[i] + (avg - cur[i]) * step
        })
        .collect();
    let vol = enclosed_volume(&next, topology);
    if !(vol * target > 0.0) {
        return Err(Error::ZeroVolume);
    }
    let scale = (target / vol).cbrt();
    let c = next.iter().sum::<Vec3>() / next.len() as f64;
    Ok(next.iter().map(|p| c + (p - c) * scale).collect())
}

/// Dominant signed axis of every vertex normal.
fn classify(points: &[Vec3], topology: &TriMesh) -> Result<Vec<(usize, i8)>> {
    let mesh = topology.with_vertices(points.to_vec());
    let normals = mesh.vertex_normals();
    normals
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if !(n.norm() > 0.5) {
                return Err(Error::Snap(format!("vertex {i} has no dominant axis")));
            }
            let a = n.iamax();
            Ok((a, if n[a] > 0.0 { 1 } else { -1 }))
        })
        .collect()
}

fn vertex_areas(points: &[Vec3], topology: &TriMesh) -> Vec<f64> {
    let mut area = vec![0.0; points.len()];
    for t in &topology.triangles {
        let a = 0.5 * (points[t[1]] - points[t[0]]).cross(&(points[t[2]] - points[t[0]])).norm();
        for &v in t {
            area[v] += a / 3.0;
        }
    }
    area
}

/// Weighted 1D samples split at gaps larger than `tol`; returns
/// `(weighted median, weight)` per cluster.
fn gap_clusters(mut samples: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].0 - samples[i - 1].0 > tol {
            let group = &samples[start..i];
            let w: f64 = group.iter().map(|s| s.1).sum();
            let mut acc = 0.0;
            let mut median = group[group.len() - 1].0;
            for s in group {
                acc += s.1;
                if acc >= 0.5 * w {
                    median = s.0;
                    break;
                }
            }
            out.push((median, w));
            start = i;
        }
    }
    out
}

/// Fitted lattice: unit `h`, per-axis origin and integer plane indices.
#[derive(Clone, Debug)]
struct LatticeFit {
    h: f64,
    origin: [f64; 3],
    extent: [i64; 3],
}

fn fit_lattice(planes: &[Vec<(f64, f64)>; 3]) -> Result<LatticeFit> {
    for (a, p) in planes.iter().enumerate() {
        if p.len() < 2 {
            return Err(Error::Snap(format!("axis {a} has {} supported planes", p.len())));
        }
    }
    let h0 = planes
        .iter()
        .flat_map(|p| p.windows(2).map(|w| w[1].0 - w[0].0))
        .fold(f64::INFINITY, f64::min);
    let ks: Vec<Vec<i64>> = planes
        .iter()
        .map(|p| p.iter().map(|&(c, _)| ((c - p[0].0) / h0).round() as i64).collect())
        .collect();
    // joint least squares for h and the axis origins
    let (mut num, mut den) = (0.0, 0.0);
    let mut means = [(0.0, 0.0); 3];
    for a in 0..3 {
        let w: f64 = planes[a].iter().map(|p| p.1).sum();
        let kbar = planes[a].iter().zip(&ks[a]).map(|(p, &k)| p.1 * k as f64).sum::<f64>() / w;
        let cbar = planes[a].iter().map(|p| p.1 * p.0).sum::<f64>() / w;
        means[a] = (kbar, cbar);
        for (p, &k) in planes[a].iter().zip(&ks[a]) {
            num += p.1 * (k as f64 - kbar) * (p.0 - cbar);
            den += p.1 * (k as f64 - kbar).powi(2);
        }
    }
    let h = if den > 0.0 { num / den } else { h0 };
    if !(h > 0.0) {
        return Err(Error::Snap("lattice fit produced a non-positive unit".into()));
    }
    let origin = [0, 1, 2].map(|a| means[a].1 - h * means[a].0);
    let extent = [0, 1, 2].map(|a| *ks[a].iter().max().unwrap());
    Ok(LatticeFit { h, origin, extent })
}

/// Snaps roughly axis-aligned positions to a polycube and assigns every
/// vertex to a boundary facet. `tol` is in the units of `points`.
pub fn snap_to_polycube(points: &[Vec3], topology: &TriMesh, tol: f64) -> Result<(PolycubeComplex, VertexFacetAssignment)> {
    check_topology(points, topology)?;
    if points.is_empty() {
        return Err(Error::Snap("empty input".into()));
    }
    let classes = classify(points, topology)?;
    let area = vertex_areas(points, topology);
    let total: f64 = area.iter().sum();

    let mut planes: [Vec<(f64, f64)>; 3] = Default::default();
    for axis in 0..3 {
        let mut merged = Vec::new();
        for sign in [-1i8, 1] {
            let samples: Vec<(f64, f64)> = (0..points.len())
                .filter(|&i| classes[i] == (axis, sign))
                .map(|i| (points[i][axis], area[i]))
                .collect();
            if samples.is_empty() {
                continue;
            }
            merged.extend(
                gap_clusters(samples, tol)
                    .into_iter()
                    .filter(|c| c.1 >= MIN_PLANE_SUPPORT * total),
            );
        }
        // +/- clusters on the same plane collapse into one
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (c, w) in merged {
            match out.last_mut() {
                Some(last) if c - last.0 <= tol => {
                    let tw = last.1 + w;
                    last.0 = (last.0 * last.1 + c * w) / tw;
                    last.1 = tw;
                }
                _ => out.push((c, w)),
            }
        }
        planes[axis] = out;
    }

    let fit = fit_lattice(&planes)?;
    let mesh = topology.with_vertices(points.to_vec());
    let cells: Vec<[i64; 3]> = (0..fit.extent[2])
        .flat_map(|z| (0..fit.extent[1]).flat_map(move |y| (0..fit.extent[0]).map(move |x| [x, y, z])))
        .collect();
    let occupied: Vec<[i64; 3]> = cells
        .par_iter()
        .filter(|c| {
            let p = Vec3::from_fn(|a, _| fit.origin[a] + fit.h * (c[a] as f64 + 0.5));
            mesh.winding_number(&p) > 0.5
        })
        .copied()
        .collect();
    if occupied.is_empty() {
        return Err(Error::Snap("no lattice cell lies inside the surface".into()));
    }
    let pc = PolycubeComplex::from_cells(fit.h, fit.origin, occupied)?;
    let report = validate_polycube(&pc, None);
    if let Some(v) = report.violations.iter().find(|v| !matches!(v, Violation::GenusMismatch { .. })) {
        return Err(Error::Snap(format!("non-manifold voxel boundary: {v}")));
    }
    let assignment = assign_vertices(&pc, points, &classes);
    Ok((pc, assignment))
}

fn assign_vertices(pc: &PolycubeComplex, points: &[Vec3], classes: &[(usize, i8)]) -> VertexFacetAssignment {
    let facets = pc.facets();
    let picked: Vec<(usize, [f64; 2], Vec3)> = points
        .par_iter()
        .zip(classes.par_iter())
        .map(|(p, &(axis, sign))| {
            let best = |filter: &dyn Fn(&Facet) -> bool| {
                let mut best: Option<(f64, usize, [f64; 2], Vec3)> = None;
                for (i, f) in facets.iter().enumerate() {
                    if !filter(f) {
                        continue;
                    }
                    let (q, st) = pc.project_to_facet(f, p);
                    let d = (q - p).norm_squared();
                    if best.as_ref().is_none_or(|b| d < b.0) {
                        best = Some((d, i, st, q));
                    }
                }
                best
            };
            let b = best(&|f| f.axis == axis && f.sign == sign)
                .or_else(|| best(&|_| true))
                .expect("complex has facets");
            (b.1, b.2, b.3)
        })
        .collect();
    VertexFacetAssignment {
        facet: picked.iter().map(|p| p.0).collect(),
        uv: picked.iter().map(|p| p.1).collect(),
        position: picked.iter().map(|p| p.2).collect(),
        source: points.to_vec(),
    }
}

/// Nearest-facet assignment of `points` with their dominant-normal classes
/// taken from `topology`.
pub fn assign_to_facets(pc: &PolycubeComplex, points: &[Vec3], topology: &TriMesh) -> Result<VertexFacetAssignment> {
    check_topology(points, topology)?;
    let classes = classify(points, topology)?;
    Ok(assign_vertices(pc, points, &classes))
}

/// One entry of a [`ValidationReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Empty,
    InteriorOverlap(usize, usize),
    NonConformingFace(usize, usize),
    NonManifoldEdge([i64; 3], [i64; 3]),
    NonManifoldVertex([i64; 3]),
    Disconnected(usize),
    GenusMismatch { expected: usize, found: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty complex"),
            Violation::InteriorOverlap(a, b) => write!(f, "interior overlap between cuboids {a} and {b}"),
            Violation::NonConformingFace(a, b) => write!(f, "cuboids {a} and {b} share a partial face"),
            Violation::NonManifoldEdge(a, b) => write!(f, "non-manifold edge {a:?}-{b:?}"),
            Violation::NonManifoldVertex(v) => write!(f, "non-manifold vertex {v:?}"),
            Violation::Disconnected(n) => write!(f, "boundary has {n} components"),
            Violation::GenusMismatch { expected, found } => write!(f, "genus {found}, expected {expected}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Boundary genus when the boundary is a connected closed manifold.
    pub genus: Option<usize>,
    pub facets: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Checks disjointness, face conformity, boundary manifoldness and genus.
pub fn validate_polycube(pc: &PolycubeComplex, expected_genus: Option<usize>) -> ValidationReport {
    let mut violations = Vec::new();
    if pc.cuboids.is_empty() {
        return ValidationReport {
            violations: vec![Violation::Empty],
            genus: None,
            facets: 0,
        };
    }
    for i in 0..pc.cuboids.len() {
        for j in i + 1..pc.cuboids.len() {
            let (a, b) = (&pc.cuboids[i], &pc.cuboids[j]);
            if a.overlaps(b) {
                violations.push(Violation::InteriorOverlap(i, j));
                continue;
            }
            for ax in 0..3 {
                if a.max[ax] != b.min[ax] && b.max[ax] != a.min[ax] {
                    continue;
                }
                let others = [(ax + 1) % 3, (ax + 2) % 3];
                let touching = others.iter().all(|&o| a.min[o].max(b.min[o]) < a.max[o].min(b.max[o]));
                let same = others.iter().all(|&o| a.min[o] == b.min[o] && a.max[o] == b.max[o]);
                if touching && !same {
                    violations.push(Violation::NonConformingFace(i, j));
                }
            }
        }
    }

    let facets = pc.facets();
    let mut edge_faces: BTreeMap<([i64; 3], [i64; 3]), Vec<usize>> = BTreeMap::new();
    let mut vertex_faces: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, f) in facets.iter().enumerate() {
        let k = f.corner_keys();
        for e in 0..4 {
            let (a, b) = (k[e], k[(e + 1) % 4]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(i);
            vertex_faces.entry(k[e]).or_default().push(i);
        }
    }
    let mut manifold = true;
    for (&(a, b), list) in &edge_faces {
        if list.len() != 2 {
            manifold = false;
            violations.push(Violation::NonManifoldEdge(a, b));
        }
    }
    // faces around a vertex must form one edge-connected fan
    for (&v, list) in &vertex_faces {
        let mut parent: Vec<usize> = (0..list.len()).collect();
        for (&(a, b), faces) in &edge_faces {
            if a != v && b != v {
                continue;
            }
            let idx: Vec<usize> = faces.iter().filter_map(|f| list.iter().position(|x| x == f)).collect();
            for w in idx.windows(2) {
                union(&mut parent, w[0], w[1]);
            }
        }
        let roots: BTreeSet<usize> = (0..list.len()).map(|i| find(&mut parent, i)).collect();
        if roots.len() > 1 {
            manifold = false;
            violations.push(Violation::NonManifoldVertex(v));
        }
    }

    let mut genus = None;
    if manifold {
        let mut parent: Vec<usize> = (0..facets.len()).collect();
        for faces in edge_faces.values() {
            union(&mut parent, faces[0], faces[1]);
        }
        let comps: BTreeSet<usize> = (0..facets.len()).map(|i| find(&mut parent, i)).collect();
        if comps.len() > 1 {
            violations.push(Violation::Disconnected(comps.len()));
        } else {
            let chi = vertex_faces.len() as i64 - edge_faces.len() as i64 + facets.len() as i64;
            let g = ((2 - chi) / 2) as usize;
            genus = Some(g);
            if let Some(e) = expected_genus.filter(|&e| e != g) {
                violations.push(Violation::GenusMismatch { expected: e, found: g });
            }
        }
    }
    ValidationReport {
        violations,
        genus,
        facets: facets.len(),
    }
}

/// Symmetric Hausdorff distance between two surfaces, measured from every
/// vertex and triangle centroid of each to the other surface.
pub fn surface_hausdorff(a: &TriMesh, b: &TriMesh) -> f64 {
    let one_sided = |from: &TriMesh, to: &TriMesh| {
        let samples: Vec<Vec3> = from
            .vertices
            .iter()
            .copied()
            .chain((0..from.triangles.len()).map(|i| from.centroid(i)))
            .collect();
        samples.par_iter().map(|p| to.closest_point(p).1).reduce(|| 0.0, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jitter(mesh: &TriMesh, sigma: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rand_distr::Normal::new(0.0, sigma).unwrap();
        mesh.vertices
            .iter()
            .map(|p| p + Vec3::new(rng.sample(d), rng.sample(d), rng.sample(d)))
            .collect()
    }

    #[test]
    fn unit_cube_facets_and_adjacency() {
        let pc = PolycubeComplex::unit_cube();
        let facets = pc.facets();
        assert_eq!(facets.len(), 6);
        let adj = pc.facet_adjacency(&facets);
        assert!(adj.iter().all(|a| a.len() == 4));
        let r = validate_polycube(&pc, Some(0));
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.genus, Some(0));
    }

    #[test]
    fn holed_cube_genus_one() {
        let cells = (0..3).flat_map(|x| (0..3).flat_map(move |y| (0..3).map(move |z| [x, y, z])));
        let pc = PolycubeComplex::from_cells(1.0, [0.0; 3], cells.filter(|c| !(c[0] == 1 && c[1] == 1))).unwrap();
        let r = validate_polycube(&pc, Some(1));
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.genus, Some(1));
        assert_eq!(r.facets, 64);
    }

    #[test]
    fn overlap_and_partial_faces_reported() {
        let a = Cuboid {
            min: [0, 0, 0],
            max: [2, 2, 2],
        };
        let b = Cuboid {
            min: [1, 1, 1],
            max: [3, 3, 3],
        };
        let r = validate_polycube(&PolycubeComplex::new(1.0, [0.0; 3], vec![a, b]).unwrap(), None);
        assert!(r.violations.contains(&Violation::InteriorOverlap(0, 1)));
        let c = Cuboid {
            min: [2, 0, 0],
            max: [3, 1, 1],
        };
        let r = validate_polycube(&PolycubeComplex::new(1.0, [0.0; 3], vec![a, c]).unwrap(), None);
        assert!(r.violations.contains(&Violation::NonConformingFace(0, 1)));
    }

    #[test]
    fn edge_touching_cells_are_non_manifold() {
        let pc = PolycubeComplex::from_cells(1.0, [0.0; 3], [[0, 0, 0], [1, 1, 0]]).unwrap();
        let r = validate_polycube(&pc, None);
        assert!(r.violations.iter().any(|v| matches!(v, Violation::NonManifoldEdge(..))));
        assert_eq!(r.genus, None);
    }

    #[test]
    fn smoothing_preserves_volume_and_lowers_energy() {
        let mesh = PolycubeComplex::unit_cube().boundary_mesh(8);
        let noisy = jitter(&mesh, 0.01, 5);
        assert_eq!(volume_preserving_smooth(&noisy, &mesh, 0).unwrap(), noisy);
        let v0 = enclosed_volume(&noisy, &mesh);
        let mut cur = noisy.clone();
        let mut e = laplacian_energy(&cur, &mesh);
        for _ in 0..50 {
            cur = volume_preserving_smooth(&cur, &mesh, 1).unwrap();
            let e1 = laplacian_energy(&cur, &mesh);
            assert!(e1 <= e, "{e1} > {e}");
            e = e1;
        }
        let v = enclosed_volume(&cur, &mesh);
        assert!(((v - v0) / v0).abs() < 0.005);
    }

    #[test]
    fn zero_volume_rejected() {
        let mesh = PolycubeComplex::unit_cube().boundary_mesh(1);
        let flat: Vec<Vec3> = mesh.vertices.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        assert!(matches!(volume_preserving_smooth(&flat, &mesh, 3), Err(Error::ZeroVolume)));
    }

    #[test]
    fn exact_cube_snaps_to_itself() {
        let mesh = PolycubeComplex::unit_cube().boundary_mesh(4);
        let (pc, asg) = snap_to_polycube(&mesh.vertices, &mesh, DEFAULT_SNAP_TOL).unwrap();
        assert_eq!(pc.cuboids, vec![Cuboid::unit([0, 0, 0])]);
        assert!((pc.h - 1.0).abs() < 1e-12);
        assert!(pc.origin.iter().all(|o| o.abs() < 1e-12));
        assert_eq!(pc.facets().len(), 6);
        for (p, q) in mesh.vertices.iter().zip(&asg.position) {
            assert!((p - q).norm() < 1e-12);
        }
        assert!(asg.uv.iter().flatten().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn noisy_cube_snaps_to_one_cell() {
        let mesh = PolycubeComplex::unit_cube().boundary_mesh(8);
        let noisy = jitter(&mesh, 0.01, 11);
        let (pc, _) = snap_to_polycube(&noisy, &mesh, DEFAULT_SNAP_TOL).unwrap();
        assert_eq!(pc.cuboids.len(), 1);
        assert_eq!(pc.facets().len(), 6);
        assert!((pc.h - 1.0).abs() < 0.02, "{}", pc.h);
    }

    #[test]
    fn noisy_stack_snaps_to_two_cells() {
        let pc0 = PolycubeComplex::from_cells(1.0, [0.0; 3], [[0, 0, 0], [1, 0, 0]]).unwrap();
        let mesh = pc0.boundary_mesh(6);
        let noisy = jitter(&mesh, 0.01, 3);
        let (pc, _) = snap_to_polycube(&noisy, &mesh, DEFAULT_SNAP_TOL).unwrap();
        assert_eq!(pc.cuboids.len(), 2);
        assert_eq!(pc.facets().len(), 10);
    }

    #[test]
    fn snapping_is_idempotent_on_holed_cube() {
        let cells = (0..3).flat_map(|x| (0..3).flat_map(move |y| (0..3).map(move |z| [x, y, z])));
        let pc0 = PolycubeComplex::from_cells(0.5, [1.0, -2.0, 0.25], cells.filter(|c| !(c[1] == 1 && c[2] == 1))).unwrap();
        let mesh = pc0.boundary_mesh(3);
        let (pc, _) = snap_to_polycube(&mesh.vertices, &mesh, 0.02).unwrap();
        assert_eq!(pc.cuboids, pc0.cuboids);
        assert!((pc.h - pc0.h).abs() < 1e-12);
        let again = pc.boundary_mesh(3);
        let (pc2, _) = snap_to_polycube(&again.vertices, &again, 0.02).unwrap();
        assert_eq!(pc2.cuboids, pc.cuboids);
        assert!((pc2.h - pc.h).abs() < 1e-12);
        assert_eq!(validate_polycube(&pc, Some(1)).genus, Some(1));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pc.json");
        let pc = PolycubeComplex::from_cells(0.25, [1.0, 2.0, 3.0], [[0, 0, 0], [0, 0, 1]]).unwrap();
        pc.save_json(&path).unwrap();
        assert_eq!(PolycubeComplex::load_json(&path).unwrap(), pc);
        std::fs::write(&path, r#"{"h":1.0,"cuboids":[],"extra":1}"#).unwrap();
        assert!(PolycubeComplex::load_json(&path).is_err());
    }
}

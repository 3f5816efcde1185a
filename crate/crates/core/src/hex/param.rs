use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::segment::SegmentationLabels;
use super::solve::{conjugate_gradient, gauss_seidel, Sparse};
use crate::error::{Error, Result};
use crate::geom::{TriMesh, Vec3};

pub const HARMONIC_TOL: f64 = 1e-10;
const WEIGHT_FLOOR: f64 = 1e-6;
const MAX_CG_ITER: usize = 20_000;
const MAX_GS_SWEEPS: usize = 200_000;

/// Map of one patch into its facet's unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchParam {
    pub facet: usize,
    /// Global vertex ids, sorted.
    pub vertices: Vec<usize>,
    /// `(s, t)` per entry of `vertices`.
    pub uv: Vec<[f64; 2]>,
    /// Patch triangles over local indices.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    /// Global ids of the four corner vertices, in facet corner order.
    pub corners: [usize; 4],
    pub residual: f64,
    pub mean_value_fallback: bool,
}

impl PatchParam {
    /// Signed parametric area of a local triangle, positive when it keeps
    /// the surface orientation.
    pub fn oriented_area(&self, tri: usize, orientation: f64) -> f64 {
        let [a, b, c] = self.triangles[tri].map(|v| self.uv[v]);
        0.5 * orientation * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    pub fn flipped(&self, orientation: f64) -> usize {
        (0..self.triangles.len()).filter(|&t| !(self.oriented_area(t, orientation) > 0.0)).count()
    }
}

fn cot(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    // cotangent of the angle at `a`
    let (u, v) = (b - a, c - a);
    u.dot(&v) / u.cross(&v).norm().max(f64::MIN_POSITIVE)
}

fn half_tan(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (u, v) = (b - a, c - a);
    let cos = u.dot(&v) / (u.norm() * v.norm());
    let sin = u.cross(&v).norm() / (u.norm() * v.norm());
    (1.0 - cos) / sin.max(f64::MIN_POSITIVE)
}

/// Harmonic map of one patch onto its facet: chord-length boundary on the
/// four sides, cotangent-weight interior. Falls back to mean-value weights
/// when the clamped cotangent map flips a triangle.
pub fn harmonic_parameterize(mesh: &TriMesh, labels: &SegmentationLabels, facet: usize) -> Result<PatchParam> {
    let f = *labels
        .facets
        .get(facet)
        .ok_or_else(|| Error::Parameterization(format!("unknown facet {facet}")))?;
    let tris = labels.patch_triangles(facet);
    let lp = &labels.loops[facet];
    if tris.is_empty() || lp.len() < 4 {
        return Err(Error::Parameterization(format!("patch {facet} is empty or has a short boundary")));
    }

    // neighbor patch across each loop edge
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (i, t) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            owner.insert((t[k], t[(k + 1) % 3]), i);
        }
    }
    let across: Vec<usize> = (0..lp.len())
        .map(|i| {
            let (a, b) = (lp[i], lp[(i + 1) % lp.len()]);
            owner.get(&(b, a)).map(|&t| labels.triangle_facet[t])
        })
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Parameterization(format!("patch {facet} boundary is open")))?;
    let Some(first) = (0..lp.len()).find(|&i| across[i] != across[(i + lp.len() - 1) % lp.len()]) else {
        return Err(Error::Parameterization(format!("patch {facet} borders a single patch")));
    };
    // runs of equal neighbor label: (neighbor, start index into loop)
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for k in 0..lp.len() {
        let i = (first + k) % lp.len();
        if runs.last().is_none_or(|r| r.0 != across[i]) {
            runs.push((across[i], i));
        }
    }
    if runs.len() != 4 {
        return Err(Error::Parameterization(format!(
            "patch {facet} boundary splits into {} sides, expected 4",
            runs.len()
        )));
    }

    let keys = f.corner_keys();
    let params = f.corner_params();
    let side_neighbor: Vec<usize> = (0..4)
        .map(|i| {
            let (a, b) = (keys[i], keys[(i + 1) % 4]);
            labels
                .facets
                .iter()
                .enumerate()
                .find(|(j, g)| {
                    *j != facet && {
                        let k = g.corner_keys();
                        k.contains(&a) && k.contains(&b)
                    }
                })
                .map(|(j, _)| j)
                .ok_or_else(|| Error::Parameterization(format!("facet {facet} side {i} has no neighbor")))
        })
        .collect::<Result<_>>()?;
    let side0 = side_neighbor
        .iter()
        .position(|&g| g == runs[0].0)
        .ok_or_else(|| Error::Parameterization(format!("patch {facet} borders a non-adjacent patch")))?;
    for (j, run) in runs.iter().enumerate() {
        if side_neighbor[(side0 + j) % 4] != run.0 {
            return Err(Error::Parameterization(format!("patch {facet} sides are out of order")));
        }
    }

    let mut vertices: Vec<usize> = tris.iter().flat_map(|&t| mesh.triangles[t]).collect();
    vertices.sort_unstable();
    vertices.dedup();
    let local: BTreeMap<usize, usize> = vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = vertices.len();
    let mut uv = vec![[0.0; 2]; n];
    let mut boundary = vec![false; n];
    let mut corners = [0usize; 4];
    for j in 0..4 {
        let side = (side0 + j) % 4;
        let start = runs[j].1;
        let end = runs[(j + 1) % 4].1;
        let len = (end + lp.len() - start) % lp.len();
        let chain: Vec<usize> = (0..=len).map(|k| lp[(start + k) % lp.len()]).collect();
        corners[side] = chain[0];
        let mut cum = vec![0.0];
        for w in chain.windows(2) {
            cum.push(cum.last().unwrap() + (mesh.vertices[w[1]] - mesh.vertices[w[0]]).norm());
        }
        let total = *cum.last().unwrap();
        let (p0, p1) = (params[side], params[(side + 1) % 4]);
        for (k, &v) in chain.iter().enumerate() {
            let t = if total > 0.0 { cum[k] / total } else { k as f64 / len as f64 };
            let l = local[&v];
            uv[l] = [p0[0] + (p1[0] - p0[0]) * t, p0[1] + (p1[1] - p0[1]) * t];
            boundary[l] = true;
        }
    }
    let triangles: Vec<[usize; 3]> = tris.iter().map(|&t| mesh.triangles[t].map(|v| local[&v])).collect();
    let pos: Vec<Vec3> = vertices.iter().map(|&v| mesh.vertices[v]).collect();

    let mut param = PatchParam {
        facet,
        vertices,
        uv,
        triangles,
        boundary,
        corners,
        residual: 0.0,
        mean_value_fallback: false,
    };
    let orientation = f.sign as f64;

    let mut cotan: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for t in &param.triangles {
        for k in 0..3 {
            let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            *cotan.entry((b.min(c), b.max(c))).or_insert(0.0) += 0.5 * cot(&pos[a], &pos[b], &pos[c]);
        }
    }
    let sym: Vec<(usize, usize, f64, f64)> = cotan
        .iter()
        .map(|(&(i, j), &w)| (i, j, w.max(WEIGHT_FLOOR), w.max(WEIGHT_FLOOR)))
        .collect();
    param.residual = solve_interior(&mut param, &sym, true)?;
    if param.flipped(orientation) == 0 {
        return Ok(param);
    }

    // mean-value weights: w_ij from the angles at i, so not symmetric
    let mut mv: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for t in &param.triangles {
        for k in 0..3 {
            let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let ht = half_tan(&pos[a], &pos[b], &pos[c]);
            for (i, j) in [(a, b), (a, c)] {
                let w = ht / (pos[j] - pos[i]).norm();
                let e = mv.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
                if i < j {
                    e.0 += w;
                } else {
                    e.1 += w;
                }
            }
        }
    }
    let asym: Vec<(usize, usize, f64, f64)> = mv.iter().map(|(&(i, j), &(wij, wji))| (i, j, wij, wji)).collect();
    param.residual = solve_interior(&mut param, &asym, false)?;
    param.mean_value_fallback = true;
    let flips = param.flipped(orientation);
    if flips > 0 {
        return Err(Error::Parameterization(format!("patch {facet} has {flips} flipped triangles")));
    }
    Ok(param)
}

/// Solves `sum_j w_ij (x_i - x_j) = 0` at interior vertices for both
/// coordinates. `edges` holds `(i, j, w_ij, w_ji)` with `i < j`.
fn solve_interior(param: &mut PatchParam, edges: &[(usize, usize, f64, f64)], symmetric: bool) -> Result<f64> {
    let n = param.uv.len();
    let mut index = vec![usize::MAX; n];
    let mut interior = Vec::new();
    for v in 0..n {
        if !param.boundary[v] {
            index[v] = interior.len();
            interior.push(v);
        }
    }
    if interior.is_empty() {
        return Ok(0.0);
    }
    let m = interior.len();
    let mut a = Sparse::new(m);
    let mut rhs = [vec![0.0; m], vec![0.0; m]];
    let mut couple = |i: usize, j: usize, w: f64, a: &mut Sparse| {
        if index[i] == usize::MAX {
            return;
        }
        let r = index[i];
        a.add(r, r, w);
        if index[j] == usize::MAX {
            rhs[0][r] += w * param.uv[j][0];
            rhs[1][r] += w * param.uv[j][1];
        } else {
            a.add(r, index[j], -w);
        }
    };
    for &(i, j, wij, wji) in edges {
        couple(i, j, wij, &mut a);
        couple(j, i, wji, &mut a);
    }
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let mut x: Vec<f64> = interior.iter().map(|&v| param.uv[v][c]).collect();
        let res = if symmetric {
            conjugate_gradient(&a, &rhs[c], &mut x, 1e-13, MAX_CG_ITER)
        } else {
            gauss_seidel(&a, &rhs[c], &mut x, 1e-13, MAX_GS_SWEEPS)
        };
        if !(res < HARMONIC_TOL) {
            return Err(Error::Parameterization(format!(
                "patch {} solve stalled at relative residual {res:e}",
                param.facet
            )));
        }
        worst = worst.max(res);
        for (k, &v) in interior.iter().enumerate() {
            param.uv[v][c] = x[k];
        }
    }
    Ok(worst)
}

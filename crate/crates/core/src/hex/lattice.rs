use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use super::param::PatchParam;
use super::solve::{conjugate_gradient, Sparse};
use crate::error::{Error, Result};
use crate::geom::{HexMesh, TriMesh, Vec3, HEX_CORNER_NEIGHBORS};
use crate::polycube::{Facet, PolycubeComplex};

const LOCATE_TOL: f64 = 1e-9;
const LOCATE_REJECT: f64 = 1e-6;

/// Uniform octree refinement: every unit cell becomes `(2^depth)^3` hexes
/// over a shared, deduplicated vertex lattice.
pub fn generate_hex_lattice(pc: &PolycubeComplex, depth: u32) -> HexMesh {
    let n = 1i64 << depth;
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut hexes = Vec::new();
    for c in pc.unit_cells() {
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let base = [c[0] * n + i, c[1] * n + j, c[2] * n + k];
                    let corner = |dx: i64, dy: i64, dz: i64| [base[0] + dx, base[1] + dy, base[2] + dz];
                    let keys = [
                        corner(0, 0, 0),
                        corner(1, 0, 0),
                        corner(1, 1, 0),
                        corner(0, 1, 0),
                        corner(0, 0, 1),
                        corner(1, 0, 1),
                        corner(1, 1, 1),
                        corner(0, 1, 1),
                    ];
                    hexes.push(keys.map(|key| {
                        *index.entry(key).or_insert_with(|| {
                            vertices.push(pc.world(key.map(|v| v as f64 / n as f64)));
                            vertices.len() - 1
                        })
                    }));
                }
            }
        }
    }
    HexMesh { vertices, hexes }
}

/// Recovers fine-lattice keys and the per-unit resolution from lattice
/// positions.
fn lattice_keys(lattice: &HexMesh, pc: &PolycubeComplex) -> Result<(Vec<[i64; 3]>, i64)> {
    let first = lattice
        .hexes
        .first()
        .ok_or_else(|| Error::InvalidMesh("empty lattice".into()))?;
    let edge = (lattice.vertices[first[1]] - lattice.vertices[first[0]]).norm();
    let n = (pc.h / edge).round().max(1.0) as i64;
    let keys = lattice
        .vertices
        .iter()
        .map(|p| [0, 1, 2].map(|a| ((p[a] - pc.origin[a]) / pc.h * n as f64).round() as i64))
        .collect();
    Ok((keys, n))
}

fn facet_contains(f: &Facet, key: &[i64; 3], n: i64) -> bool {
    let (u, v) = f.tangent_axes();
    key[f.axis] == f.layer * n
        && (f.cell[u] * n..=(f.cell[u] + 1) * n).contains(&key[u])
        && (f.cell[v] * n..=(f.cell[v] + 1) * n).contains(&key[v])
}

/// Physical position of facet-local `(s, t)` through the inverse of the
/// patch map.
fn locate(param: &PatchParam, mesh: &TriMesh, st: [f64; 2]) -> Option<Vec3> {
    let mut best: Option<(f64, [f64; 3], usize)> = None;
    for (i, t) in param.triangles.iter().enumerate() {
        let [a, b, c] = t.map(|v| param.uv[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if det == 0.0 {
            continue;
        }
        let l1 = ((st[0] - a[0]) * (c[1] - a[1]) - (st[1] - a[1]) * (c[0] - a[0])) / det;
        let l2 = ((b[0] - a[0]) * (st[1] - a[1]) - (b[1] - a[1]) * (st[0] - a[0])) / det;
        let l = [1.0 - l1 - l2, l1, l2];
        let worst = l.iter().copied().fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| worst > b.0) {
            best = Some((worst, l, i));
        }
        if worst >= -LOCATE_TOL {
            break;
        }
    }
    let (worst, l, i) = best?;
    if worst < -LOCATE_REJECT {
        return None;
    }
    let l = l.map(|x| x.max(0.0));
    let s: f64 = l.iter().sum();
    let t = param.triangles[i];
    Some((0..3).map(|k| mesh.vertices[param.vertices[t[k]]] * (l[k] / s)).sum())
}

/// Moves lattice nodes onto the physical shape: boundary nodes through the
/// inverse patch maps, interior cell faces by harmonic extension of the
/// boundary displacement, then transfinite blending inside every cell.
pub fn map_to_physical(lattice: &HexMesh, params: &[PatchParam], mesh: &TriMesh, pc: &PolycubeComplex) -> Result<HexMesh> {
    let facets = pc.facets();
    if params.len() != facets.len() || params.iter().enumerate().any(|(i, p)| p.facet != i) {
        return Err(Error::Parameterization(format!(
            "{} parameterizations for {} facets",
            params.len(),
            facets.len()
        )));
    }
    let (keys, n) = lattice_keys(lattice, pc)?;
    let boundary = lattice.boundary_vertex_mask();

    let mapped: Vec<Option<Vec3>> = (0..keys.len())
        .into_par_iter()
        .map(|v| {
            if !boundary[v] {
                return Ok(None);
            }
            let key = keys[v];
            let fi = facets
                .iter()
                .position(|f| facet_contains(f, &key, n))
                .ok_or(Error::PointLocation(v))?;
            let f = &facets[fi];
            let (u, w) = f.tangent_axes();
            let st = [
                key[u] as f64 / n as f64 - f.cell[u] as f64,
                key[w] as f64 / n as f64 - f.cell[w] as f64,
            ];
            locate(&params[fi], mesh, st).map(Some).ok_or(Error::PointLocation(v))
        })
        .collect::<Result<_>>()?;

    let mut pos = lattice.vertices.clone();
    for (v, m) in mapped.iter().enumerate() {
        if let Some(p) = m {
            pos[v] = *p;
        }
    }

    // nodes on unit-cell faces that are not on the boundary
    let on_skeleton = |k: &[i64; 3]| k.iter().any(|c| c.rem_euclid(n) == 0);
    let skeleton: Vec<usize> = (0..keys.len())
        .filter(|&v| !boundary[v] && on_skeleton(&keys[v]))
        .collect();
    if !skeleton.is_empty() {
        harmonic_extension(lattice, &boundary, &mut pos);
    }

    let index: HashMap<[i64; 3], usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let fixed = pos.clone();
    let cell_updates: Vec<Vec<(usize, Vec3)>> = pc
        .unit_cells()
        .into_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|c| transfinite_cell(c, n, &index, &fixed))
        .collect();
    for (v, p) in cell_updates.into_iter().flatten() {
        pos[v] = p;
    }
    Ok(HexMesh {
        vertices: pos,
        hexes: lattice.hexes.clone(),
    })
}

/// Replaces every non-boundary node by the discrete harmonic extension of
/// the boundary displacement over the lattice edge graph.
fn harmonic_extension(lattice: &HexMesh, boundary: &[bool], pos: &mut [Vec3]) {
    let mut edges = BTreeSet::new();
    for h in &lattice.hexes {
        for (c, nb) in HEX_CORNER_NEIGHBORS.iter().enumerate() {
            for &o in nb {
                edges.insert((h[c].min(h[o]), h[c].max(h[o])));
            }
        }
    }
    let mut index = vec![usize::MAX; pos.len()];
    let mut interior = Vec::new();
    for v in 0..pos.len() {
        if !boundary[v] {
            index[v] = interior.len();
            interior.push(v);
        }
    }
    let disp: Vec<Vec3> = pos.iter().zip(&lattice.vertices).map(|(p, q)| p - q).collect();
    let m = interior.len();
    let mut a = Sparse::new(m);
    let mut rhs = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for &(i, j) in &edges {
        for (p, q) in [(i, j), (j, i)] {
            if index[p] == usize::MAX {
                continue;
            }
            let r = index[p];
            a.add(r, r, 1.0);
            if index[q] == usize::MAX {
                for c in 0..3 {
                    rhs[c][r] += disp[q][c];
                }
            } else {
                a.add(r, index[q], -1.0);
            }
        }
    }
    for c in 0..3 {
        let mut x = vec![0.0; m];
        conjugate_gradient(&a, &rhs[c], &mut x, 1e-12, 10_000);
        for (k, &v) in interior.iter().enumerate() {
            pos[v][c] = lattice.vertices[v][c] + x[k];
        }
    }
}

/// Transfinite trilinear interpolation of the strict interior of one unit
/// cell from the current positions of its six faces.
fn transfinite_cell(c: &[i64; 3], n: i64, index: &HashMap<[i64; 3], usize>, pos: &[Vec3]) -> Vec<(usize, Vec3)> {
    let at = |i: i64, j: i64, k: i64| pos[index[&[c[0] * n + i, c[1] * n + j, c[2] * n + k]]];
    let mut out = Vec::new();
    let nf = n as f64;
    for k in 1..n {
        for j in 1..n {
            for i in 1..n {
                let (x, y, z) = (i as f64 / nf, j as f64 / nf, k as f64 / nf);
                let (xs, ys, zs) = ([1.0 - x, x], [1.0 - y, y], [1.0 - z, z]);
                let (ii, jj, kk) = ([0, n], [0, n], [0, n]);
                let mut p = Vec3::zeros();
                for a in 0..2 {
                    p += at(ii[a], j, k) * xs[a] + at(i, jj[a], k) * ys[a] + at(i, j, kk[a]) * zs[a];
                }
                for a in 0..2 {
                    for b in 0..2 {
                        p -= at(ii[a], jj[b], k) * (xs[a] * ys[b])
                            + at(ii[a], j, kk[b]) * (xs[a] * zs[b])
                            + at(i, jj[a], kk[b]) * (ys[a] * zs[b]);
                    }
                }
                for a in 0..2 {
                    for b in 0..2 {
                        for d in 0..2 {
                            p += at(ii[a], jj[b], kk[d]) * (xs[a] * ys[b] * zs[d]);
                        }
                    }
                }
                out.push((index[&[c[0] * n + i, c[1] * n + j, c[2] * n + k]], p));
            }
        }
    }
    out
}

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{edge_use_counts, TriMesh, Vec3};
use crate::polycube::{Facet, PolycubeComplex, VertexFacetAssignment};

const MAX_REPAIR_ROUNDS: usize = 64;

/// Surface patches, one per boundary facet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationLabels {
    pub facets: Vec<Facet>,
    pub triangle_facet: Vec<usize>,
    /// Per facet, its patch boundary in triangle-edge direction.
    pub loops: Vec<Vec<usize>>,
}

impl SegmentationLabels {
    pub fn patch_triangles(&self, facet: usize) -> Vec<usize> {
        (0..self.triangle_facet.len())
            .filter(|&t| self.triangle_facet[t] == facet)
            .collect()
    }
}

/// Triangle neighbors across each of its three edges.
pub(crate) fn triangle_neighbors(mesh: &TriMesh) -> Vec<[Option<usize>; 3]> {
    let mut by_edge: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(i);
        }
    }
    mesh.triangles
        .iter()
        .enumerate()
        .map(|(i, t)| {
            [0, 1, 2].map(|k| {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                by_edge[&(a.min(b), a.max(b))].iter().copied().find(|&j| j != i)
            })
        })
        .collect()
}

fn components(labels: &[usize], nbrs: &[[Option<usize>; 3]], label: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    for start in 0..labels.len() {
        if labels[start] != label || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(t) = queue.pop_front() {
            comp.push(t);
            for n in nbrs[t].iter().flatten() {
                if labels[*n] == label && !seen[*n] {
                    seen[*n] = true;
                    queue.push_back(*n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Facet labels per triangle from the vertex assignment, fragment repair,
/// and topological checks against the complex.
pub fn segment_surface(mesh: &TriMesh, assignment: &VertexFacetAssignment, pc: &PolycubeComplex) -> Result<SegmentationLabels> {
    let n = mesh.vertices.len();
    if assignment.facet.len() != n || assignment.source.len() != n {
        return Err(Error::Segmentation(format!("{} assignments for {n} vertices", assignment.facet.len())));
    }
    let facets = pc.facets();
    if assignment.facet.iter().any(|&f| f >= facets.len()) {
        return Err(Error::Segmentation("assignment refers to an unknown facet".into()));
    }
    let nearest = |cands: &[usize], c: &Vec3| -> usize {
        *cands
            .iter()
            .min_by(|&&a, &&b| {
                let da = (pc.project_to_facet(&facets[a], c).0 - c).norm();
                let db = (pc.project_to_facet(&facets[b], c).0 - c).norm();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap()
    };
    let src = &assignment.source;
    let mut labels: Vec<usize> = mesh
        .triangles
        .iter()
        .map(|t| {
            let p = t.map(|v| src[v]);
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let axis = n.iamax();
            let sign = if n[axis] > 0.0 { 1 } else { -1 };
            let all = t.map(|v| assignment.facet[v]);
            let c = (p[0] + p[1] + p[2]) / 3.0;
            // the nearest facet facing the triangle's way; plain vertex
            // majority mislabels the strips along polycube edges
            let facing: Vec<usize> = (0..facets.len())
                .filter(|&f| facets[f].axis == axis && facets[f].sign == sign)
                .collect();
            if !facing.is_empty() {
                return nearest(&facing, &c);
            }
            let count = |f: usize| all.iter().filter(|&&g| g == f).count();
            let top = all.iter().map(|&f| count(f)).max().unwrap();
            let mut tied: Vec<usize> = all.iter().copied().filter(|&f| count(f) == top).collect();
            tied.sort_unstable();
            tied.dedup();
            nearest(&tied, &c)
        })
        .collect();

    let nbrs = triangle_neighbors(mesh);
    if nbrs.iter().flatten().any(|n| n.is_none()) {
        return Err(Error::Segmentation("surface has open edges".into()));
    }
    for _ in 0..MAX_REPAIR_ROUNDS {
        let mut changed = false;
        for label in 0..facets.len() {
            let mut comps = components(&labels, &nbrs, label);
            if comps.len() <= 1 {
                continue;
            }
            comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
            for frag in &comps[1..] {
                let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
                for &t in frag {
                    for nb in nbrs[t].iter().flatten() {
                        if labels[*nb] != label {
                            *votes.entry(labels[*nb]).or_insert(0) += 1;
                        }
                    }
                }
                if let Some((&to, _)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                    for &t in frag {
                        labels[t] = to;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let missing: Vec<usize> = (0..facets.len()).filter(|f| !labels.contains(f)).collect();
    if !missing.is_empty() {
        return Err(Error::Segmentation(format!("facets without a patch: {missing:?}")));
    }
    let split: Vec<usize> = (0..facets.len())
        .filter(|&f| components(&labels, &nbrs, f).len() > 1)
        .collect();
    if !split.is_empty() {
        return Err(Error::Segmentation(format!("patches still disconnected after repair: {split:?}")));
    }

    let mut loops = Vec::with_capacity(facets.len());
    let mut bad_disk = Vec::new();
    for f in 0..facets.len() {
        match patch_loop(mesh, &labels, &nbrs, f) {
            Some(l) => loops.push(l),
            None => {
                bad_disk.push(f);
                loops.push(Vec::new());
            }
        }
    }
    if !bad_disk.is_empty() {
        return Err(Error::Segmentation(format!("patches that are not disks: {bad_disk:?}")));
    }

    let facet_adj = pc.facet_adjacency(&facets);
    let mut patch_adj = vec![BTreeSet::new(); facets.len()];
    for (t, nb) in nbrs.iter().enumerate() {
        for o in nb.iter().flatten() {
            if labels[*o] != labels[t] {
                patch_adj[labels[t]].insert(labels[*o]);
            }
        }
    }
    let offending: Vec<usize> = (0..facets.len())
        .filter(|&f| patch_adj[f].iter().copied().collect::<Vec<_>>() != facet_adj[f])
        .collect();
    if !offending.is_empty() {
        let detail: Vec<String> = offending
            .iter()
            .map(|&f| format!("{f}: patch {:?} vs facet {:?}", patch_adj[f], facet_adj[f]))
            .collect();
        return Err(Error::Segmentation(format!("adjacency mismatch: {}", detail.join("; "))));
    }
    Ok(SegmentationLabels {
        facets,
        triangle_facet: labels,
        loops,
    })
}

/// Boundary loop of a disk patch, or `None` if the patch is not a disk.
fn patch_loop(mesh: &TriMesh, labels: &[usize], nbrs: &[[Option<usize>; 3]], f: usize) -> Option<Vec<usize>> {
    let tris: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == f).collect();
    let patch: Vec<[usize; 3]> = tris.iter().map(|&t| mesh.triangles[t]).collect();
    let verts: BTreeSet<usize> = patch.iter().flatten().copied().collect();
    let edges = edge_use_counts(&patch).len();
    let chi = verts.len() as i64 - edges as i64 + patch.len() as i64;
    if chi != 1 {
        return None;
    }
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in &tris {
        let tri = mesh.triangles[t];
        for k in 0..3 {
            if let Some(o) = nbrs[t][k] {
                if labels[o] != f && next.insert(tri[k], tri[(k + 1) % 3]).is_some() {
                    return None;
                }
            }
        }
    }
    let &start = next.keys().next()?;
    let mut out = vec![start];
    let mut cur = next[&start];
    while cur != start {
        out.push(cur);
        cur = *next.get(&cur)?;
        if out.len() > next.len() {
            return None;
        }
    }
    (out.len() == next.len()).then_some(out)
}

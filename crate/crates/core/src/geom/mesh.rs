use std::collections::{BTreeMap, HashMap};

use super::Vec3;
use crate::error::{Error, Result};

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Aabb { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }
}

/// Closed or open triangle surface.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh, checking index ranges and that every triangle has
    /// positive area.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("triangle {i} index out of range")));
            }
        }
        let mesh = TriMesh { vertices, triangles };
        for i in 0..mesh.triangles.len() {
            if !(mesh.triangle_area(i) > 0.0) {
                return Err(Error::InvalidMesh(format!("triangle {i} has zero area")));
            }
        }
        Ok(mesh)
    }

    /// Same connectivity, new positions. No area check: intermediate
    /// diffusion outputs may legitimately contain slivers.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> TriMesh {
        assert_eq!(vertices.len(), self.vertices.len());
        TriMesh {
            vertices,
            triangles: self.triangles.clone(),
        }
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(&self.vertices).unwrap_or(Aabb {
            min: Vec3::zeros(),
            max: Vec3::zeros(),
        })
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        let t = self.triangles[tri];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Unnormalized normal; its length is twice the triangle area.
    pub fn triangle_cross(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        0.5 * self.triangle_cross(tri).norm()
    }

    pub fn centroid(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (a + b + c) / 3.0
    }

    /// Area-weighted vertex normals (unit length where defined).
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for (i, t) in self.triangles.iter().enumerate() {
            let n = self.triangle_cross(i);
            for &v in t {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Sorted, deduplicated vertex neighbor lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Unique undirected edges as `(min, max)` pairs in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        edge_use_counts(&self.triangles).into_keys().collect()
    }

    /// Signed enclosed volume by the divergence theorem.
    pub fn enclosed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Closest surface point and its distance, by exhaustive search.
    pub fn closest_point(&self, p: &Vec3) -> (Vec3, f64) {
        let mut best = (*p, f64::INFINITY);
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.corners(i);
            let q = closest_point_on_triangle(p, &a, &b, &c);
            let d = (q - p).norm_squared();
            if d < best.1 {
                best = (q, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Generalized winding number; ~1 inside a closed outward-oriented
    /// surface, ~0 outside.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.corners(i);
            let (a, b, c) = (a - p, b - p, c - p);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }
}

/// Use count of every undirected edge, keyed `(min, max)`.
pub fn edge_use_counts(triangles: &[[usize; 3]]) -> BTreeMap<(usize, usize), usize> {
    let mut counts = BTreeMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    counts
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Genus of a closed, connected, manifold triangle surface from its Euler
/// characteristic. Disconnected input yields [`Error::Disconnected`] with
/// the genus of every component.
pub fn mesh_genus(mesh: &TriMesh) -> Result<usize> {
    let counts = edge_use_counts(&mesh.triangles);
    for (&(a, b), &c) in &counts {
        match c {
            2 => {}
            1 => return Err(Error::OpenBoundary(a, b)),
            _ => return Err(Error::NonManifoldEdge(a, b, c)),
        }
    }
    let mut uf = UnionFind::new(mesh.vertices.len());
    for t in &mesh.triangles {
        uf.union(t[0], t[1]);
        uf.union(t[1], t[2]);
    }
    // (V, E, F) per component root
    let mut comps: BTreeMap<usize, (i64, i64, i64)> = BTreeMap::new();
    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &v in t {
            used[v] = true;
        }
        let root = uf.find(t[0]);
        comps.entry(root).or_default().2 += 1;
    }
    for (v, &u) in used.iter().enumerate() {
        if u {
            let root = uf.find(v);
            comps.entry(root).or_default().0 += 1;
        }
    }
    for &(a, _) in counts.keys() {
        let root = uf.find(a);
        comps.entry(root).or_default().1 += 1;
    }
    let mut genera = Vec::with_capacity(comps.len());
    for (v, e, f) in comps.values() {
        let chi = v - e + f;
        if chi > 2 || (2 - chi) % 2 != 0 {
            return Err(Error::InvalidMesh(format!("Euler characteristic {chi} is not that of an orientable closed surface")));
        }
        genera.push(((2 - chi) / 2) as usize);
    }
    match genera.len() {
        0 => Err(Error::InvalidMesh("empty mesh".into())),
        1 => Ok(genera[0]),
        _ => Err(Error::Disconnected(genera)),
    }
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Hexahedron faces with outward orientation under the VTK corner order.
pub const HEX_FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
];

/// For each corner, its three edge neighbors in right-handed order.
pub const HEX_CORNER_NEIGHBORS: [[usize; 3]; 8] = [
    [1, 3, 4],
    [2, 0, 5],
    [3, 1, 6],
    [0, 2, 7],
    [7, 5, 0],
    [4, 6, 1],
    [5, 7, 2],
    [6, 4, 3],
];

/// All-hex volume mesh in VTK corner order: bottom face counter-clockwise
/// (viewed from the top face), then the top face in the same rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct HexMesh {
    pub vertices: Vec<Vec3>,
    pub hexes: Vec<[usize; 8]>,
}

impl HexMesh {
    pub fn new(vertices: Vec<Vec3>, hexes: Vec<[usize; 8]>) -> Result<Self> {
        let n = vertices.len();
        for (i, h) in hexes.iter().enumerate() {
            if h.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("hex {i} index out of range")));
            }
            let mut s = *h;
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidMesh(format!("hex {i} repeats a vertex")));
            }
        }
        Ok(HexMesh { vertices, hexes })
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(&self.vertices).unwrap_or(Aabb {
            min: Vec3::zeros(),
            max: Vec3::zeros(),
        })
    }

    /// Faces used by exactly one hex, outward oriented, in hex order.
    pub fn boundary_quads(&self) -> Vec<[usize; 4]> {
        let mut uses: HashMap<[usize; 4], usize> = HashMap::new();
        for h in &self.hexes {
            for f in HEX_FACES {
                let mut key = f.map(|c| h[c]);
                key.sort_unstable();
                *uses.entry(key).or_insert(0) += 1;
            }
        }
        let mut out = Vec::new();
        for h in &self.hexes {
            for f in HEX_FACES {
                let quad = f.map(|c| h[c]);
                let mut key = quad;
                key.sort_unstable();
                if uses[&key] == 1 {
                    out.push(quad);
                }
            }
        }
        out
    }

    /// Vertices lying on the boundary surface.
    pub fn boundary_vertex_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for q in self.boundary_quads() {
            for v in q {
                mask[v] = true;
            }
        }
        mask
    }

    /// Checks that the boundary quads form a closed 2-manifold: every
    /// boundary edge is shared by exactly two boundary quads with opposite
    /// orientation.
    pub fn check_closed_boundary(&self) -> Result<()> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for q in self.boundary_quads() {
            for k in 0..4 {
                *directed.entry((q[k], q[(k + 1) % 4])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &c) in &directed {
            if c != 1 || directed.get(&(b, a)) != Some(&1) {
                return Err(Error::InvalidMesh(format!("boundary edge ({a}, {b}) is not manifold")));
            }
        }
        Ok(())
    }

    /// Boundary surface as a triangle mesh over the same vertex array.
    pub fn boundary_trimesh(&self) -> TriMesh {
        let mut tris = Vec::new();
        for q in self.boundary_quads() {
            tris.push([q[0], q[1], q[2]]);
            tris.push([q[0], q[2], q[3]]);
        }
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: tris,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_cube_mesh() -> TriMesh {
        let v = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let mut t = Vec::new();
        for q in quads {
            t.push([q[0], q[1], q[2]]);
            t.push([q[0], q[2], q[3]]);
        }
        TriMesh::new(v, t).unwrap()
    }

    #[test]
    fn cube_genus_zero_and_volume_one() {
        let m = unit_cube_mesh();
        assert_eq!(mesh_genus(&m).unwrap(), 0);
        assert!((m.enclosed_volume() - 1.0).abs() < 1e-15);
        assert!((m.winding_number(&Vec3::new(0.5, 0.5, 0.5)) - 1.0).abs() < 1e-9);
        assert!(m.winding_number(&Vec3::new(2.0, 0.5, 0.5)).abs() < 1e-9);
    }

    #[test]
    fn open_and_nonmanifold_detected() {
        let mut m = unit_cube_mesh();
        m.triangles.pop();
        assert!(matches!(mesh_genus(&m), Err(Error::OpenBoundary(..))));
        let mut m = unit_cube_mesh();
        let extra = m.triangles[0];
        m.triangles.push(extra);
        assert!(matches!(mesh_genus(&m), Err(Error::NonManifoldEdge(..))));
    }

    #[test]
    fn disconnected_reports_each_component() {
        let a = unit_cube_mesh();
        let mut b = a.clone();
        let off = a.vertices.len();
        b.vertices.extend(a.vertices.iter().map(|p| p + Vec3::new(3.0, 0.0, 0.0)));
        b.triangles.extend(a.triangles.iter().map(|t| t.map(|v| v + off)));
        match mesh_genus(&b) {
            Err(Error::Disconnected(g)) => assert_eq!(g, vec![0, 0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_area_triangle_rejected() {
        let v = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let q = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let q = closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(q, a);
        let q = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn single_hex_boundary_closed() {
        let v = [
            (0., 0., 0.),
            (1., 0., 0.),
            (1., 1., 0.),
            (0., 1., 0.),
            (0., 0., 1.),
            (1., 0., 1.),
            (1., 1., 1.),
            (0., 1., 1.),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z))
        .collect();
        let h = HexMesh::new(v, vec![[0, 1, 2, 3, 4, 5, 6, 7]]).unwrap();
        assert_eq!(h.boundary_quads().len(), 6);
        h.check_closed_boundary().unwrap();
        let surf = h.boundary_trimesh();
        assert!((surf.enclosed_volume() - 1.0).abs() < 1e-15);
        assert!(HexMesh::new(h.vertices.clone(), vec![[0, 1, 2, 3, 4, 5, 6, 6]]).is_err());
    }
}

use std::collections::HashMap;

use super::mesh::TriMesh;
use super::Vec3;

/// Rectilinear grid of cells with an occupancy flag per cell.
///
/// `planes[a]` lists the `dims[a] + 1` plane coordinates along axis `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub planes: [Vec<f64>; 3],
    pub occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(planes: [Vec<f64>; 3]) -> Self {
        let n = (planes[0].len() - 1) * (planes[1].len() - 1) * (planes[2].len() - 1);
        VoxelGrid {
            planes,
            occupied: vec![false; n],
        }
    }

    /// Uniform grid of `n^3` cells over `[min, min + size]^3`-style bounds.
    pub fn uniform(min: Vec3, size: Vec3, dims: [usize; 3]) -> Self {
        let planes = [0, 1, 2].map(|a| (0..=dims[a]).map(|i| min[a] + size[a] * i as f64 / dims[a] as f64).collect());
        Self::new(planes)
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.planes[a].len() - 1)
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        let d = self.dims();
        (c[2] * d[1] + c[1]) * d[0] + c[0]
    }

    pub fn get(&self, c: [isize; 3]) -> bool {
        let d = self.dims();
        if (0..3).any(|a| c[a] < 0 || c[a] as usize >= d[a]) {
            return false;
        }
        self.occupied[self.index([c[0] as usize, c[1] as usize, c[2] as usize])]
    }

    pub fn set(&mut self, c: [usize; 3], v: bool) {
        let i = self.index(c);
        self.occupied[i] = v;
    }

    pub fn cells(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let d = self.dims();
        (0..d[2]).flat_map(move |z| (0..d[1]).flat_map(move |y| (0..d[0]).map(move |x| [x, y, z])))
    }

    /// Boundary faces `(cell, axis, sign)` between occupied and empty cells.
    pub fn boundary_faces(&self) -> Vec<([usize; 3], usize, i8)> {
        let mut out = Vec::new();
        for c in self.cells() {
            if !self.occupied[self.index(c)] {
                continue;
            }
            for axis in 0..3 {
                for sign in [-1i8, 1] {
                    let mut n = c.map(|v| v as isize);
                    n[axis] += sign as isize;
                    if !self.get(n) {
                        out.push((c, axis, sign));
                    }
                }
            }
        }
        out
    }

    /// Outward-oriented triangulated boundary with every cell face split
    /// into `subdiv x subdiv` quads. Vertices on shared edges are welded.
    pub fn boundary_mesh(&self, subdiv: usize) -> TriMesh {
        let subdiv = subdiv.max(1);
        let mut keys: HashMap<[usize; 3], usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let planes = &self.planes;
        let mut vertex = |k: [usize; 3]| -> usize {
            *keys.entry(k).or_insert_with(|| {
                let p = Vec3::from_fn(|a, _| {
                    let (cell, sub) = (k[a] / subdiv, k[a] % subdiv);
                    if cell + 1 >= planes[a].len() {
                        planes[a][cell]
                    } else {
                        let t = sub as f64 / subdiv as f64;
                        planes[a][cell] * (1.0 - t) + planes[a][cell + 1] * t
                    }
                });
                vertices.push(p);
                vertices.len() - 1
            })
        };
        for (c, axis, sign) in self.boundary_faces() {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let layer = if sign > 0 { c[axis] + 1 } else { c[axis] } * subdiv;
            for i in 0..subdiv {
                for j in 0..subdiv {
                    let corner = |di: usize, dj: usize| {
                        let mut k = [0usize; 3];
                        k[axis] = layer;
                        k[u] = c[u] * subdiv + i + di;
                        k[v] = c[v] * subdiv + j + dj;
                        k
                    };
                    let mut q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)].map(&mut vertex);
                    if sign < 0 {
                        q.reverse();
                    }
                    triangles.push([q[0], q[1], q[2]]);
                    triangles.push([q[0], q[2], q[3]]);
                }
            }
        }
        TriMesh { vertices, triangles }
    }
}

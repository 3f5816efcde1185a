//! Analytic test surfaces.
#![allow(dead_code)]

use ddpm_polycube::geom::{TriMesh, Vec3};
use ddpm_polycube::polycube::PolycubeComplex;

/// Unit cube surface with `subdiv^2` quads per face, twisted about z and
/// bulged outward.
pub fn deformed_cube(subdiv: usize) -> TriMesh {
    let cube = PolycubeComplex::unit_cube().boundary_mesh(subdiv);
    let verts = cube.vertices.iter().map(deform).collect();
    TriMesh::new(verts, cube.triangles).unwrap()
}

pub fn deform(p: &Vec3) -> Vec3 {
    let c = p - Vec3::new(0.5, 0.5, 0.5);
    let pi = std::f64::consts::PI;
    let bulge = 0.06 * (pi * p.x).sin() * (pi * p.y).sin() * (pi * p.z).sin();
    let angle = 0.25 * c.z;
    let (s, co) = angle.sin_cos();
    let twisted = Vec3::new(co * c.x - s * c.y, s * c.x + co * c.y, c.z);
    twisted * (1.0 + bulge) + Vec3::new(0.5, 0.5, 0.5)
}

/// Cube `[-1, 1]^3` with edges and corners rounded to `radius`, `subdiv`
/// segments per face edge.
pub fn rounded_cube(subdiv: usize, radius: f64) -> TriMesh {
    let cube = PolycubeComplex::new(2.0, [-1.0; 3], PolycubeComplex::unit_cube().cuboids)
        .unwrap()
        .boundary_mesh(subdiv);
    let inner = 1.0 - radius;
    let verts = cube
        .vertices
        .iter()
        .map(|p| {
            let core = p.map(|v| v.clamp(-inner, inner));
            core + (p - core).normalize() * radius
        })
        .collect();
    TriMesh::new(verts, cube.triangles).unwrap()
}

fn spow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

/// Square ring around z with superelliptic sections: outer half-width
/// `ring + tube`, hole half-width `ring - tube`, height `2 * half_height`.
pub fn superellipse_torus(nu: usize, nv: usize, ring: f64, tube: f64, half_height: f64) -> TriMesh {
    let e = 0.25;
    let mut verts = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / nu as f64;
        let (dx, dy) = (spow(th.cos(), e), spow(th.sin(), e));
        for j in 0..nv {
            let ph = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / nv as f64;
            let r = ring + tube * spow(ph.cos(), e);
            let z = half_height * spow(ph.sin(), e);
            verts.push(Vec3::new(r * dx, r * dy, z));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut tris = Vec::new();
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    let mut mesh = TriMesh::new(verts, tris).unwrap();
    if mesh.enclosed_volume() < 0.0 {
        for t in &mut mesh.triangles {
            t.swap(1, 2);
        }
    }
    mesh
}

/// Unit cube boundary projected onto the sphere about its center.
pub fn cube_sphere(subdiv: usize) -> (TriMesh, TriMesh) {
    let cube = PolycubeComplex::unit_cube().boundary_mesh(subdiv);
    let c = Vec3::new(0.5, 0.5, 0.5);
    let verts = cube.vertices.iter().map(|p| c + (p - c).normalize() * 0.5).collect();
    (TriMesh::new(verts, cube.triangles.clone()).unwrap(), cube)
}

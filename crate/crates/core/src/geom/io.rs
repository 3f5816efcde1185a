use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::mesh::{Aabb, HexMesh, TriMesh};
use super::Vec3;
use crate::error::{Error, Result};

/// Loads an OBJ or STL surface mesh, chosen by file extension.
pub fn load_surface_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "obj" => {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                location: format!("byte {}", e.utf8_error().valid_up_to()),
                message: "OBJ is not valid UTF-8".into(),
            })?;
            parse_obj(&text)
        }
        "stl" => parse_stl(&bytes),
        other => Err(Error::Parse {
            location: path.display().to_string(),
            message: format!("unsupported surface format `{other}`"),
        }),
    }
}

/// Parses ASCII OBJ `v` and `f` records. Faces with more than three
/// corners are rejected.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = parts.next().ok_or_else(|| Error::Parse {
                        location: format!("line {line_no}"),
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *slot = tok.parse().map_err(|_| Error::Parse {
                        location: format!("line {line_no}"),
                        message: format!("bad coordinate `{tok}`"),
                    })?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let corners: Vec<&str> = parts.collect();
                if corners.len() != 3 {
                    if corners.len() > 3 {
                        return Err(Error::NonTriangularFace {
                            line: line_no,
                            corners: corners.len(),
                        });
                    }
                    return Err(Error::Parse {
                        location: format!("line {line_no}"),
                        message: "face needs three corners".into(),
                    });
                }
                let mut t = [0usize; 3];
                for (slot, tok) in t.iter_mut().zip(&corners) {
                    let idx_tok = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok.parse().map_err(|_| Error::Parse {
                        location: format!("line {line_no}"),
                        message: format!("bad face index `{tok}`"),
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        -1
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(Error::Parse {
                            location: format!("line {line_no}"),
                            message: format!("face index {idx} out of range"),
                        });
                    }
                    *slot = resolved as usize;
                }
                triangles.push(t);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Parses binary or ASCII STL and welds coincident corners.
pub fn parse_stl(bytes: &[u8]) -> Result<TriMesh> {
    let corners = if is_binary_stl(bytes) {
        parse_binary_stl(bytes)?
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            location: format!("byte {}", e.valid_up_to()),
            message: "STL is neither binary nor UTF-8 text".into(),
        })?;
        parse_ascii_stl(text)?
    };
    weld(&corners)
}

fn is_binary_stl(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    bytes.len() == 84 + 50 * n
}

fn parse_binary_stl(bytes: &[u8]) -> Result<Vec<Vec3>> {
    let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    let mut corners = Vec::with_capacity(3 * n);
    for f in 0..n {
        let base = 84 + 50 * f + 12;
        for k in 0..3 {
            let mut c = [0.0; 3];
            for (a, slot) in c.iter_mut().enumerate() {
                let o = base + 12 * k + 4 * a;
                *slot = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64;
            }
            corners.push(Vec3::new(c[0], c[1], c[2]));
        }
    }
    Ok(corners)
}

fn parse_ascii_stl(text: &str) -> Result<Vec<Vec3>> {
    let mut corners = Vec::new();
    let mut in_facet = 0;
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("facet") => in_facet = 0,
            Some("vertex") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = parts.next().unwrap_or("");
                    *slot = tok.parse().map_err(|_| Error::Parse {
                        location: format!("line {}", lineno + 1),
                        message: format!("bad vertex coordinate `{tok}`"),
                    })?;
                }
                corners.push(Vec3::new(c[0], c[1], c[2]));
                in_facet += 1;
            }
            Some("endfacet") if in_facet != 3 => {
                return Err(Error::NonTriangularFace {
                    line: lineno + 1,
                    corners: in_facet,
                });
            }
            _ => {}
        }
    }
    if corners.len() % 3 != 0 {
        return Err(Error::Parse {
            location: "end of file".into(),
            message: "truncated facet".into(),
        });
    }
    Ok(corners)
}

/// Welds corners closer than `1e-8 x bbox diagonal`, visiting them in
/// lexicographic coordinate order so the result is independent of facet
/// order.
fn weld(corners: &[Vec3]) -> Result<TriMesh> {
    let bbox = Aabb::from_points(corners).ok_or_else(|| Error::InvalidMesh("empty STL".into()))?;
    let tol = (1e-8 * bbox.diagonal()).max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..corners.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (corners[a], corners[b]);
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(p.z.total_cmp(&q.z))
            .then(a.cmp(&b))
    });
    let cell = |p: &Vec3| {
        (
            ((p.x - bbox.min.x) / tol).floor() as i64,
            ((p.y - bbox.min.y) / tol).floor() as i64,
            ((p.z - bbox.min.z) / tol).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut remap = vec![0usize; corners.len()];
    for &ci in &order {
        let p = corners[ci];
        let (x, y, z) = cell(&p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(x + dx, y + dy, z + dz)) {
                        for &v in list {
                            if (vertices[v] - p).norm() <= tol {
                                found = Some(v);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        let v = match found {
            Some(v) => v,
            None => {
                vertices.push(p);
                grid.entry((x, y, z)).or_default().push(vertices.len() - 1);
                vertices.len() - 1
            }
        };
        remap[ci] = v;
    }
    let triangles = (0..corners.len() / 3)
        .map(|f| [remap[3 * f], remap[3 * f + 1], remap[3 * f + 2]])
        .collect();
    TriMesh::new(vertices, triangles)
}

/// Writes an OBJ surface; used for intermediate pipeline artifacts.
pub fn write_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
}

/// VTK hexahedron cell type.
const VTK_HEXAHEDRON: u32 = 12;

/// Writes a legacy VTK 3.0 ASCII unstructured grid. Coordinates use the
/// shortest round-tripping decimal form, so the output is byte-stable and
/// reloads bit-exactly.
pub fn write_hexmesh_vtk(mesh: &HexMesh, cell_scalars: Option<&[f64]>, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("ddpm-polycube hex mesh\n");
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    let m = mesh.hexes.len();
    let _ = writeln!(s, "CELLS {} {}", m, 9 * m);
    for h in &mesh.hexes {
        s.push('8');
        for v in h {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        let _ = writeln!(s, "{VTK_HEXAHEDRON}");
    }
    if let Some(values) = cell_scalars {
        if values.len() != m {
            return Err(Error::Length(format!("{} cell scalars for {} cells", values.len(), m)));
        }
        let _ = writeln!(s, "CELL_DATA {m}");
        s.push_str("SCALARS scaled_jacobian double 1\nLOOKUP_TABLE default\n");
        for v in values {
            let _ = writeln!(s, "{v:?}");
        }
    }
    std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
}

/// Reads back the subset of legacy VTK written by [`write_hexmesh_vtk`]
/// (hexahedral cells only).
pub fn read_hexmesh_vtk(path: impl AsRef<Path>) -> Result<HexMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.lines().skip(4).flat_map(str::split_whitespace).peekable();
    let perr = |m: &str| Error::Parse {
        location: path.display().to_string(),
        message: m.to_string(),
    };
    let mut vertices = Vec::new();
    let mut hexes = Vec::new();
    while let Some(tok) = tokens.next() {
        match tok {
            "POINTS" => {
                let n: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| perr("bad POINTS"))?;
                tokens.next();
                for _ in 0..n {
                    let mut c = [0.0; 3];
                    for slot in &mut c {
                        *slot = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| perr("bad point"))?;
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
            }
            "CELLS" => {
                let m: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| perr("bad CELLS"))?;
                tokens.next();
                for _ in 0..m {
                    let k: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| perr("bad cell"))?;
                    if k != 8 {
                        return Err(perr("non-hexahedral cell"));
                    }
                    let mut h = [0usize; 8];
                    for slot in &mut h {
                        *slot = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| perr("bad index"))?;
                    }
                    hexes.push(h);
                }
            }
            "CELL_TYPES" => {
                let m: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| perr("bad CELL_TYPES"))?;
                for _ in 0..m {
                    if tokens.next() != Some("12") {
                        return Err(perr("cell type is not 12"));
                    }
                }
            }
            "CELL_DATA" => break,
            _ => {}
        }
    }
    HexMesh::new(vertices, hexes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_cube_stl() -> Vec<u8> {
        // 12 facets of the unit cube, each emitting its own three corners.
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let p = |i: usize| [(i & 1) as f32, ((i >> 1) & 1) as f32, ((i >> 2) & 1) as f32];
        let mut out = vec![0u8; 80];
        out.extend_from_slice(&12u32.to_le_bytes());
        for q in quads {
            for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                out.extend_from_slice(&[0u8; 12]);
                for v in tri {
                    for c in p(v) {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                out.extend_from_slice(&[0u8; 2]);
            }
        }
        out
    }

    #[test]
    fn obj_minimal_and_quad_rejection() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (3, 1));
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n").unwrap_err();
        assert!(err.to_string().contains("non-triangular face"), "{err}");
        let err = parse_obj("v 0 0\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn obj_slash_and_negative_indices() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1 2//5 3/2/1\n").unwrap();
        assert_eq!(m.triangles[0], [0, 1, 2]);
    }

    #[test]
    fn binary_stl_cube_welds_to_eight_vertices() {
        let bytes = binary_cube_stl();
        // Oracle: distinct corner coordinates over the facet list.
        let mut distinct: Vec<[u32; 3]> = Vec::new();
        for f in 0..12 {
            for k in 0..3 {
                let o = 84 + 50 * f + 12 + 12 * k;
                let c = [0, 4, 8].map(|a| f32::from_le_bytes(bytes[o + a..o + a + 4].try_into().unwrap()).to_bits());
                if !distinct.contains(&c) {
                    distinct.push(c);
                }
            }
        }
        let m = parse_stl(&bytes).unwrap();
        assert_eq!(m.vertices.len(), distinct.len());
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        assert_eq!(crate::geom::mesh_genus(&m).unwrap(), 0);
    }

    #[test]
    fn ascii_stl_parses() {
        let text = "solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 0\nvertex 0 1 0\nendloop\nendfacet\nendsolid t\n";
        let m = parse_stl(text.as_bytes()).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (3, 1));
    }
}

//! Surface and volume mesh value types, topology queries and the frame
//! normalization chain.

mod io;
mod mesh;
mod transform;
mod voxel;

pub use io::{load_surface_mesh, parse_obj, parse_stl, read_hexmesh_vtk, write_hexmesh_vtk, write_obj};
pub use mesh::{
    closest_point_on_triangle, edge_use_counts, mesh_genus, Aabb, HexMesh, TriMesh, HEX_CORNER_NEIGHBORS,
    HEX_FACES,
};
pub use transform::{normalize_for_frame, NormalizationTransform, FIRST_AXIS_SHIFT};
pub use voxel::VoxelGrid;

/// 3D position in model units.
pub type Vec3 = nalgebra::Vector3<f64>;

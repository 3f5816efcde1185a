//! Polycube-guided all-hex meshing: surface segmentation, harmonic patch
//! maps, octree lattice, mapping, pillowing and quality improvement.

mod improve;
mod lattice;
mod param;
mod pillow;
mod quality;
mod segment;
mod solve;

pub use improve::{improve_quality, ImproveConfig, ImproveOutcome};
pub use lattice::{generate_hex_lattice, map_to_physical};
pub use param::{harmonic_parameterize, PatchParam, HARMONIC_TOL};
pub use pillow::{pillow_boundary, pillow_boundary_with, DEFAULT_PILLOW_FRACTION};
pub use quality::{corner_scaled_jacobian, hex_scaled_jacobian, scaled_jacobian, QualityReport, HISTOGRAM_BINS};
pub use segment::{segment_surface, SegmentationLabels};

use rayon::prelude::*;

use crate::error::Result;
use crate::geom::{HexMesh, TriMesh};
use crate::polycube::{PolycubeComplex, VertexFacetAssignment};

/// Intermediate and final products of [`build_hex_mesh`].
#[derive(Clone, Debug)]
pub struct HexOutcome {
    pub labels: SegmentationLabels,
    pub params: Vec<PatchParam>,
    pub mapped: HexMesh,
    pub pillowed: HexMesh,
    pub improved: ImproveOutcome,
}

/// Runs segmentation through quality improvement for one surface.
pub fn build_hex_mesh(
    mesh: &TriMesh,
    assignment: &VertexFacetAssignment,
    pc: &PolycubeComplex,
    depth: u32,
    quality: &ImproveConfig,
) -> Result<HexOutcome> {
    let labels = segment_surface(mesh, assignment, pc)?;
    let params = (0..labels.facets.len())
        .into_par_iter()
        .map(|f| harmonic_parameterize(mesh, &labels, f))
        .collect::<Result<Vec<_>>>()?;
    let lattice = generate_hex_lattice(pc, depth);
    let mapped = map_to_physical(&lattice, &params, mesh, pc)?;
    let pillowed = pillow_boundary(&mapped)?;
    let improved = improve_quality(&pillowed, mesh, quality)?;
    Ok(HexOutcome {
        labels,
        params,
        mapped,
        pillowed,
        improved,
    })
}

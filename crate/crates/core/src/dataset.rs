//! Training configurations built from a cube and a cube with a square
//! through-hole, laid out on a 2x1 grid of unit cells along X.
//!
//! Configuration ids follow `t = 2 * kind + unit` for the eight single
//! primitive types (kind order: cube, hole along Z, hole along X, hole along
//! Y; unit 0 or 1), and `t = 8` for two stacked cubes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_frame_with, GeometryFrame, POINTS_PER_UNIT};
use crate::diffusion::{drift_from_target, DiffusionSchedule, DriftField, TrainItem};
use crate::error::{Error, Result};
use crate::geom::{Aabb, NormalizationTransform, TriMesh, Vec3, VoxelGrid};
use crate::num::Real;

/// Axis along which the grid units are laid out (the codec sort axis).
pub const GRID_AXIS: usize = 0;
pub const GRID_UNITS: usize = 2;
/// Side of the square through-hole as a fraction of the cube edge.
pub const HOLE_FRACTION: f64 = 1.0 / 3.0;
pub const CONTEXT_LEN: usize = 29;
pub const CONFIGURATION_TYPES: u8 = 9;

const CANDIDATE_POINTS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Cube,
    CubeHoleX,
    CubeHoleY,
    CubeHoleZ,
}

impl PrimitiveKind {
    /// Kinds in configuration-id order.
    pub const ORDER: [PrimitiveKind; 4] = [
        PrimitiveKind::Cube,
        PrimitiveKind::CubeHoleZ,
        PrimitiveKind::CubeHoleX,
        PrimitiveKind::CubeHoleY,
    ];

    pub fn hole_axis(self) -> Option<usize> {
        match self {
            PrimitiveKind::Cube => None,
            PrimitiveKind::CubeHoleX => Some(0),
            PrimitiveKind::CubeHoleY => Some(1),
            PrimitiveKind::CubeHoleZ => Some(2),
        }
    }

    pub fn genus(self) -> usize {
        usize::from(self.hole_axis().is_some())
    }

    /// Occupancy of the 3x3x3 lattice describing this primitive on the unit
    /// cube `[0, 1]^3`.
    pub fn voxels(self) -> VoxelGrid {
        let mut g = VoxelGrid::uniform(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), [3, 3, 3]);
        let axis = self.hole_axis();
        for c in g.cells().collect::<Vec<_>>() {
            let in_hole = axis.is_some_and(|a| (0..3).filter(|&b| b != a).all(|b| c[b] == 1));
            g.set(c, !in_hole);
        }
        g
    }

    /// Triangulated boundary of the unit primitive.
    pub fn mesh(self) -> TriMesh {
        self.voxels().boundary_mesh(4)
    }
}

/// Surface samples of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePointCloud {
    pub points: Vec<Vec3>,
    pub source: ConfigurationType,
    pub seed: u64,
}

/// One of the nine grid configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ConfigurationType(u8);

impl TryFrom<u8> for ConfigurationType {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        ConfigurationType::new(v)
    }
}

impl From<ConfigurationType> for u8 {
    fn from(t: ConfigurationType) -> u8 {
        t.0
    }
}

impl ConfigurationType {
    pub const STACKED: ConfigurationType = ConfigurationType(8);

    pub fn new(id: u8) -> Result<Self> {
        if id >= CONFIGURATION_TYPES {
            return Err(Error::Config(format!("configuration type {id} outside 0..=8")));
        }
        Ok(ConfigurationType(id))
    }

    pub fn all() -> impl Iterator<Item = ConfigurationType> {
        (0..CONFIGURATION_TYPES).map(ConfigurationType)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// `(grid unit, primitive)` for every occupied unit, in unit order.
    pub fn units(self) -> Vec<(usize, PrimitiveKind)> {
        if self.0 == 8 {
            vec![(0, PrimitiveKind::Cube), (1, PrimitiveKind::Cube)]
        } else {
            let kind = PrimitiveKind::ORDER[(self.0 / 2) as usize];
            vec![((self.0 % 2) as usize, kind)]
        }
    }

    pub fn live_points(self) -> usize {
        self.units().len() * POINTS_PER_UNIT
    }

    /// Bounding box of the occupied grid cells.
    pub fn region(self) -> Aabb {
        let units = self.units();
        let lo = units.iter().map(|u| u.0).min().unwrap_or(0) as f64;
        let hi = units.iter().map(|u| u.0).max().unwrap_or(0) as f64 + 1.0;
        let mut min = Vec3::zeros();
        let mut max = Vec3::new(1.0, 1.0, 1.0);
        min[GRID_AXIS] = lo;
        max[GRID_AXIS] = hi;
        Aabb { min, max }
    }

    pub fn genus(self) -> usize {
        self.units().iter().map(|u| u.1.genus()).sum()
    }
}

/// Bounding box of the whole 2x1 grid.
pub fn grid_bounds() -> Aabb {
    let mut max = Vec3::new(1.0, 1.0, 1.0);
    max[GRID_AXIS] = GRID_UNITS as f64;
    Aabb { min: Vec3::zeros(), max }
}

/// Frame normalization shared by every training configuration.
pub fn grid_transform() -> NormalizationTransform {
    NormalizationTransform::fit(&grid_bounds()).expect("grid bounds are non-degenerate")
}

/// 29-entry one-hot configuration descriptor, stored as a bitmask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextVector(u32);

impl ContextVector {
    pub fn for_type(id: u8) -> Result<Self> {
        Ok(context_vector(ConfigurationType::new(id)?))
    }

    pub fn from_mask(mask: u32) -> Result<Self> {
        if mask >> CONTEXT_LEN != 0 {
            return Err(Error::Config(format!("context mask {mask:#x} exceeds 29 bits")));
        }
        Ok(ContextVector(mask))
    }

    /// Parses a configuration id (`0..=8`) or a raw mask (`0x...` or `0b...`).
    pub fn parse(spec: &str) -> Result<Self> {
        let s = spec.trim();
        if let Some(hex) = s.strip_prefix("0x") {
            let m = u32::from_str_radix(hex, 16).map_err(|e| Error::Config(format!("bad context mask `{s}`: {e}")))?;
            return Self::from_mask(m);
        }
        if let Some(bin) = s.strip_prefix("0b") {
            let m = u32::from_str_radix(bin, 2).map_err(|e| Error::Config(format!("bad context mask `{s}`: {e}")))?;
            return Self::from_mask(m);
        }
        let id: u8 = s.parse().map_err(|_| Error::Config(format!("bad context `{s}`")))?;
        Self::for_type(id)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn bit(self, n: usize) -> bool {
        n < CONTEXT_LEN && (self.0 >> n) & 1 == 1
    }

    pub fn set_bits(self) -> Vec<usize> {
        (0..CONTEXT_LEN).filter(|&n| self.bit(n)).collect()
    }

    pub fn to_values<S: Real>(self) -> [S; CONTEXT_LEN] {
        std::array::from_fn(|n| if self.bit(n) { S::one() } else { S::zero() })
    }
}

/// Kronecker-delta encoding: bit `4t` for single types, bits 0 and 4 for
/// the stacked type.
pub fn context_vector(t: ConfigurationType) -> ContextVector {
    if t == ConfigurationType::STACKED {
        ContextVector((1 << 0) | (1 << 4))
    } else {
        ContextVector(1 << (4 * t.id() as u32))
    }
}

/// Watertight unit primitive and 512 farthest-point samples of its surface.
pub fn build_primitive(kind: PrimitiveKind, seed: u64) -> (TriMesh, Vec<Vec3>) {
    let mesh = kind.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = sample_surface(&mesh, CANDIDATE_POINTS, &mut rng);
    let points = farthest_point_sampling(&candidates, POINTS_PER_UNIT, rng.random_range(0..candidates.len()));
    (mesh, points)
}

/// Area-weighted uniform surface samples.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &TriMesh, count: usize, rng: &mut R) -> Vec<Vec3> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for i in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(i);
        cdf.push(acc);
    }
    (0..count)
        .map(|_| {
            let r = rng.random_range(0.0..acc);
            let tri = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.corners(tri);
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect()
}

/// Greedy farthest-point subsampling starting from `start`.
pub fn farthest_point_sampling(points: &[Vec3], count: usize, start: usize) -> Vec<Vec3> {
    let count = count.min(points.len());
    let mut chosen = Vec::with_capacity(count);
    if count == 0 {
        return chosen;
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..count {
        chosen.push(points[current]);
        let p = points[current];
        let mut best = (0usize, -1.0);
        for (i, q) in points.iter().enumerate() {
            let d = (q - p).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.1 {
                best = (i, dist[i]);
            }
        }
        current = best.0;
    }
    chosen
}

/// Places each occupied unit's primitive in its grid cell; 512 points per
/// unit, unit clouds concatenated in unit order.
pub fn assemble_configuration(t: ConfigurationType, seed: u64) -> SurfacePointCloud {
    let mut points = Vec::with_capacity(t.live_points());
    for (k, (unit, kind)) in t.units().into_iter().enumerate() {
        let (_, cloud) = build_primitive(kind, seed.wrapping_mul(31).wrapping_add(k as u64));
        let mut offset = Vec3::zeros();
        offset[GRID_AXIS] = unit as f64;
        points.extend(cloud.into_iter().map(|p| p + offset));
    }
    SurfacePointCloud { points, source: t, seed }
}

/// Encodes a configuration cloud on the shared grid normalization.
pub fn configuration_frame<S: Real>(t: ConfigurationType, seed: u64) -> Result<(GeometryFrame<S>, usize)> {
    let cloud = assemble_configuration(t, seed);
    let (frame, meta) = encode_frame_with(&cloud.points, &grid_transform())?;
    Ok((frame, meta.live))
}

/// Random smooth deformation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformParams {
    pub min_centers: usize,
    pub max_centers: usize,
    /// Displacement bounds as fractions of the unit edge.
    pub min_amplitude: f64,
    pub max_amplitude: f64,
    pub min_width: f64,
    pub max_width: f64,
}

impl Default for DeformParams {
    fn default() -> Self {
        DeformParams {
            min_centers: 3,
            max_centers: 8,
            min_amplitude: 0.03,
            max_amplitude: 0.15,
            min_width: 0.25,
            max_width: 0.5,
        }
    }
}

/// Gaussian radial-basis displacement field.
#[derive(Clone, Debug)]
pub struct RbfField {
    centers: Vec<Vec3>,
    weights: Vec<Vec3>,
    widths: Vec<f64>,
    scale: f64,
}

impl RbfField {
    /// Samples a field over `region` and scales it so that its largest
    /// displacement over `points` equals a random amplitude.
    pub fn sample<R: Rng + ?Sized>(params: &DeformParams, region: &Aabb, points: &[Vec3], rng: &mut R) -> Self {
        let n = rng.random_range(params.min_centers..=params.max_centers.max(params.min_centers));
        let ext = region.extent();
        let centers = (0..n)
            .map(|_| region.min + Vec3::from_fn(|a, _| ext[a] * rng.random::<f64>()))
            .collect();
        let weights = (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let widths = (0..n)
            .map(|_| rng.random_range(params.min_width..=params.max_width))
            .collect();
        let amplitude = rng.random_range(params.min_amplitude..=params.max_amplitude);
        let mut field = RbfField {
            centers,
            weights,
            widths,
            scale: 1.0,
        };
        let peak = points.iter().map(|p| field.displacement(p).norm()).fold(0.0, f64::max);
        field.scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
        field
    }

    pub fn displacement(&self, p: &Vec3) -> Vec3 {
        let mut d = Vec3::zeros();
        for ((c, w), r) in self.centers.iter().zip(&self.weights).zip(&self.widths) {
            d += w * (-(p - c).norm_squared() / (2.0 * r * r)).exp();
        }
        d * self.scale
    }
}

/// A clean frame and the drift that carries it to a deformed target.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub x_target: GeometryFrame<f64>,
    pub q: DriftField<f64>,
}

const MAX_DEFORM_ATTEMPTS: usize = 16;

/// Deforms `x0` (grid-normalized, `live` slots) by a random smooth field and
/// returns the target frame with the paired drift
/// `q = (x_target - sqrt(abar_T) x0) / c_T`.
///
/// Slot correspondence is kept: slot `s` of the target is the displaced
/// point of slot `s`. A draw is rejected when a point is pushed past the
/// middle of a neighboring grid unit (along any axis).
pub fn synthesize_training_pair(
    x0: &GeometryFrame<f64>,
    live: usize,
    deform: &DeformParams,
    schedule: &DiffusionSchedule<f64>,
    seed: u64,
) -> Result<TrainingPair> {
    let transform = grid_transform();
    let points: Vec<Vec3> = (0..live)
        .map(|s| {
            let [x, y, z] = x0.slot_point(s);
            transform.inverse(&Vec3::new(x, y, z))
        })
        .collect();
    let region = Aabb::from_points(&points).unwrap_or_else(grid_bounds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DEFORM_ATTEMPTS {
        let field = RbfField::sample(deform, &region, &points, &mut rng);
        let moved: Vec<Vec3> = points.iter().map(|p| p + field.displacement(p)).collect();
        let crosses = points.iter().zip(&moved).any(|(p, m)| {
            let unit = p[GRID_AXIS].floor().clamp(0.0, (GRID_UNITS - 1) as f64);
            (0..3).any(|a| {
                let lo = if a == GRID_AXIS { unit } else { 0.0 };
                m[a] < lo - 0.5 || m[a] > lo + 1.5
            })
        });
        if crosses {
            continue;
        }
        let mut x_target = GeometryFrame::zeros();
        for (s, m) in moved.iter().enumerate() {
            let f = transform.forward(m);
            for c in 0..3 {
                x_target.set(c, s, f[c]);
            }
        }
        let q = drift_from_target(&x_target, schedule, Some(x0));
        return Ok(TrainingPair { x_target, q });
    }
    Err(Error::DeformRejected(MAX_DEFORM_ATTEMPTS))
}

/// One dataset manifest record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    #[serde(rename = "type")]
    pub kind: ConfigurationType,
    pub seed: u64,
    pub deform_seed: u64,
}

/// Dataset manifest: the records needed to regenerate every pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
    #[serde(default)]
    pub deform: Option<DeformParams>,
}

impl DatasetManifest {
    /// `pairs` records cycling through `types`, seeds derived from `seed`.
    pub fn generate(types: &[ConfigurationType], pairs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..pairs)
            .map(|i| DatasetEntry {
                kind: types[i % types.len()],
                seed: rng.random(),
                deform_seed: rng.random(),
            })
            .collect();
        DatasetManifest { entries, deform: None }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Materializes every record into a training item.
    pub fn build<S: Real>(&self, schedule: &DiffusionSchedule<f64>) -> Result<Vec<TrainItem<S>>> {
        let deform = self.deform.unwrap_or_default();
        use rayon::prelude::*;
        self.entries
            .par_iter()
            .map(|e| {
                let (x0, live) = configuration_frame::<f64>(e.kind, e.seed)?;
                let pair = synthesize_training_pair(&x0, live, &deform, schedule, e.deform_seed)?;
                Ok(TrainItem {
                    x0: x0.cast(),
                    q: DriftField(pair.q.0.cast()),
                    context: context_vector(e.kind),
                    live,
                })
            })
            .collect()
    }
}

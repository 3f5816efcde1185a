use serde::{Deserialize, Serialize};

use super::mesh::Aabb;
use super::Vec3;
use crate::error::{Error, Result};

/// Shift applied to the first coordinate after scaling into `[-0.5, 0.5]`.
pub const FIRST_AXIS_SHIFT: f64 = 0.5;

/// Uniform map from model units into frame space:
/// `f(p) = (p - center) / (2 * half_extent) + (0.5, 0, 0)`.
///
/// Dividing by `half_extent` lands the bounding box in `[-1, 1]^3`, the extra
/// factor of two scales it to `[-0.5, 0.5]^3`, and the first axis is then
/// shifted by `+0.5`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl NormalizationTransform {
    pub fn new(center: Vec3, half_extent: f64) -> Result<Self> {
        if !(half_extent > 0.0) || !half_extent.is_finite() {
            return Err(Error::DegenerateBounds);
        }
        Ok(NormalizationTransform {
            center: [center.x, center.y, center.z],
            half_extent,
        })
    }

    /// Transform fitting `bbox` into `[-1, 1]^3` with one scale for all axes.
    pub fn fit(bbox: &Aabb) -> Result<Self> {
        let half = bbox.extent().max() * 0.5;
        Self::new(bbox.center(), half)
    }

    /// Transform that places `bbox` (aspect preserved, centered) inside
    /// `region` and then applies `region_transform`. Used to bring inference
    /// inputs to the dataset's scale for the occupied grid units.
    pub fn fit_into_region(bbox: &Aabb, region: &Aabb, region_transform: &Self) -> Result<Self> {
        let ext = bbox.extent();
        let reg = region.extent();
        let mut scale = f64::INFINITY;
        for a in 0..3 {
            if ext[a] > 0.0 {
                scale = scale.min(reg[a] / ext[a]);
            }
        }
        if !scale.is_finite() {
            return Err(Error::DegenerateBounds);
        }
        // p -> region.center + (p - bbox.center) * scale, then region_transform:
        // ((p - c_b) * s + c_r - c_t) / (2 h_t) == (p - c') / (2 h')
        // with h' = h_t / s and c' = c_b - (c_r - c_t) / s.
        let ct = region_transform.center_vec();
        let c = bbox.center() - (region.center() - ct) / scale;
        Self::new(c, region_transform.half_extent / scale)
    }

    pub fn center_vec(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.center[2])
    }

    /// Model units per frame unit.
    pub fn scale(&self) -> f64 {
        2.0 * self.half_extent
    }

    pub fn forward(&self, p: &Vec3) -> Vec3 {
        let mut q = (p - self.center_vec()) / self.scale();
        q.x += FIRST_AXIS_SHIFT;
        q
    }

    pub fn inverse(&self, q: &Vec3) -> Vec3 {
        let mut p = *q;
        p.x -= FIRST_AXIS_SHIFT;
        p * self.scale() + self.center_vec()
    }
}

/// Normalizes a point set into frame space, returning the transform for
/// exact inversion.
pub fn normalize_for_frame(points: &[Vec3]) -> Result<(Vec<Vec3>, NormalizationTransform)> {
    let bbox = Aabb::from_points(points).ok_or(Error::DegenerateBounds)?;
    let t = NormalizationTransform::fit(&bbox)?;
    Ok((points.iter().map(|p| t.forward(p)).collect(), t))
}

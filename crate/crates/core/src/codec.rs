//! Conversion between point clouds and the 3-channel 32x32 coordinate image.
//!
//! Slots are packed row-major: slot `s` sits at row `s / 32`, column
//! `s % 32`, and channel `c` holds coordinate axis `c`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_for_frame, NormalizationTransform, Vec3};
use crate::num::Real;

pub const FRAME_SIDE: usize = 32;
pub const FRAME_SLOTS: usize = FRAME_SIDE * FRAME_SIDE;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_LEN: usize = FRAME_CHANNELS * FRAME_SLOTS;
/// Points contributed by one occupied grid unit.
pub const POINTS_PER_UNIT: usize = 512;

/// 3 x 32 x 32 coordinate image, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryFrame<S> {
    pub data: Vec<S>,
}

impl<S: Real> GeometryFrame<S> {
    pub fn zeros() -> Self {
        GeometryFrame {
            data: vec![S::zero(); FRAME_LEN],
        }
    }

    pub fn from_vec(data: Vec<S>) -> Result<Self> {
        if data.len() != FRAME_LEN {
            return Err(Error::Shape(format!("frame needs {FRAME_LEN} values, got {}", data.len())));
        }
        Ok(GeometryFrame { data })
    }

    #[inline]
    pub fn get(&self, channel: usize, slot: usize) -> S {
        self.data[channel * FRAME_SLOTS + slot]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, slot: usize, v: S) {
        self.data[channel * FRAME_SLOTS + slot] = v;
    }

    pub fn slot_point(&self, slot: usize) -> [S; 3] {
        [self.get(0, slot), self.get(1, slot), self.get(2, slot)]
    }

    pub fn cast<T: Real>(&self) -> GeometryFrame<T> {
        GeometryFrame {
            data: self.data.iter().map(|v| T::of(v.to_f64v())).collect(),
        }
    }

    pub fn scaled(&self, k: S) -> Self {
        GeometryFrame {
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    /// `self + k * other`
    pub fn add_scaled(&self, k: S, other: &Self) -> Self {
        GeometryFrame {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + k * b).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Zeroes every slot at or beyond `live`.
    pub fn mask_to(&mut self, live: usize) {
        for c in 0..FRAME_CHANNELS {
            for s in live..FRAME_SLOTS {
                self.set(c, s, S::zero());
            }
        }
    }
}

/// Everything needed to invert [`encode_frame`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    /// Live point count `N`; slots `N..1024` are padding.
    pub live: usize,
    /// `order[slot]` is the original index of the point stored in `slot`.
    pub order: Vec<usize>,
    pub transform: NormalizationTransform,
    /// Grid units the frame is sized for (1 -> 512 slots, 2 -> 1024).
    pub units: u8,
}

impl FrameMeta {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Encodes with the cloud's own bounding box.
pub fn encode_frame<S: Real>(points: &[Vec3]) -> Result<(GeometryFrame<S>, FrameMeta)> {
    if points.len() > FRAME_SLOTS {
        return Err(Error::TooManyPoints(points.len()));
    }
    let (_, t) = normalize_for_frame(points)?;
    encode_frame_with(points, &t)
}

/// Encodes with a caller-supplied transform (dataset grid or inference fit).
pub fn encode_frame_with<S: Real>(points: &[Vec3], transform: &NormalizationTransform) -> Result<(GeometryFrame<S>, FrameMeta)> {
    let n = points.len();
    if n > FRAME_SLOTS {
        return Err(Error::TooManyPoints(n));
    }
    let normalized: Vec<Vec3> = points.iter().map(|p| transform.forward(p)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (normalized[a], normalized[b]);
        p.x.total_cmp(&q.x)
            .then(p.y.total_cmp(&q.y))
            .then(p.z.total_cmp(&q.z))
            .then(a.cmp(&b))
    });
    let mut frame = GeometryFrame::zeros();
    for (slot, &src) in order.iter().enumerate() {
        let p = normalized[src];
        for c in 0..3 {
            frame.set(c, slot, S::of(p[c]));
        }
    }
    let units = if n <= POINTS_PER_UNIT { 1 } else { 2 };
    Ok((
        frame,
        FrameMeta {
            live: n,
            order,
            transform: *transform,
            units,
        },
    ))
}

/// Writes slot values back into original vertex order and model units.
pub fn decode_frame<S: Real>(frame: &GeometryFrame<S>, meta: &FrameMeta) -> Result<Vec<Vec3>> {
    let n = meta.live;
    if n > FRAME_SLOTS || meta.order.len() != n {
        return Err(Error::MetaMismatch(format!("live count {n} vs permutation of {}", meta.order.len())));
    }
    let mut seen = vec![false; n];
    for &o in &meta.order {
        if o >= n || std::mem::replace(&mut seen[o], true) {
            return Err(Error::MetaMismatch("permutation is not a bijection".into()));
        }
    }
    let mut out = vec![Vec3::zeros(); n];
    for (slot, &dst) in meta.order.iter().enumerate() {
        let [x, y, z] = frame.slot_point(slot);
        out[dst] = meta.transform.inverse(&Vec3::new(x.to_f64v(), y.to_f64v(), z.to_f64v()));
    }
    Ok(out)
}

const FRAME_MAGIC: &[u8; 4] = b"DPCF";
const FRAME_VERSION: u32 = 1;

/// Writes frames as a `DPCF` blob: 16-byte header (magic, u32 version,
/// u64 count) then `count x 3 x 32 x 32` little-endian f32 values.
pub fn write_frame_blob(path: impl AsRef<Path>, frames: &[GeometryFrame<f32>]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + frames.len() * FRAME_LEN * 4);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&(frames.len() as u64).to_le_bytes());
    for f in frames {
        for v in &f.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_frame_blob(path: impl AsRef<Path>) -> Result<Vec<GeometryFrame<f32>>> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..4] != FRAME_MAGIC {
        return Err(Error::BadMagic(path.display().to_string()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FRAME_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FRAME_VERSION,
        });
    }
    let count = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let body = &buf[16..];
    if body.len() != count * FRAME_LEN * 4 {
        return Err(Error::Length(format!("{} bytes for {count} frames", body.len())));
    }
    Ok(body
        .chunks_exact(FRAME_LEN * 4)
        .map(|chunk| GeometryFrame {
            data: chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
        })
        .collect())
}

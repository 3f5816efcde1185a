//! `DPCW` weight files: magic, version, length-prefixed JSON header,
//! little-endian `f32` tensors, trailing CRC32 of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamHeader};
use super::unet::{Descriptor, UNet};
use crate::error::{Error, Result};
use crate::num::Real;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DPCW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    descriptor: Descriptor,
    optimizer: Option<AdamHeader>,
}

fn push_tensors<S: Real>(out: &mut Vec<u8>, tensors: &[Vec<S>]) {
    for t in tensors {
        for v in t {
            out.extend_from_slice(&(v.to_f64v() as f32).to_le_bytes());
        }
    }
}

/// Serializes a network (and optionally its optimizer state).
pub fn encode_weights<S: Real>(net: &UNet<S>, opt: Option<&Adam<S>>) -> Result<Vec<u8>> {
    let header = Header {
        descriptor: net.descriptor(),
        optimizer: opt.map(Adam::header),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_tensors(&mut out, &net.params().values);
    push_tensors(&mut out, &net.params().buffers);
    if let Some(o) = opt {
        push_tensors(&mut out, &o.m);
        push_tensors(&mut out, &o.v);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_weights<S: Real>(bytes: &[u8], origin: &str) -> Result<(UNet<S>, Option<Adam<S>>)> {
    if bytes.len() < 16 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::BadMagic(origin.to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != WEIGHTS_VERSION {
        return Err(Error::Version {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Length(format!("header length {json_len} exceeds file size {}", bytes.len())))?;
    let header: Header = serde_json::from_slice(&bytes[16..json_end])?;
    let d = &header.descriptor;
    let n_params: usize = d.params.iter().map(|s| s.len()).sum();
    let n_buffers: usize = d.buffers.iter().map(|s| s.len()).sum();
    let n_total = n_params + n_buffers + if header.optimizer.is_some() { 2 * n_params } else { 0 };
    let expected = json_end + 4 * n_total + 4;
    if bytes.len() != expected {
        return Err(Error::Length(format!("file has {} bytes, descriptor implies {expected}", bytes.len())));
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut floats = body[json_end..]
        .chunks_exact(4)
        .map(|c| S::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
    let mut take = |specs: &[super::ParamSpec]| -> Vec<Vec<S>> { specs.iter().map(|s| floats.by_ref().take(s.len()).collect()).collect() };
    let values = take(&d.params);
    let buffers = take(&d.buffers);
    let opt = header.optimizer.map(|h| Adam {
        beta1: h.beta1,
        beta2: h.beta2,
        eps: h.eps,
        step: h.step,
        m: take(&d.params),
        v: take(&d.params),
    });
    let net = UNet::from_parts(d, values, buffers)?;
    Ok((net, opt))
}

pub fn save_weights<S: Real>(net: &UNet<S>, opt: Option<&Adam<S>>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_weights(net, opt)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_weights<S: Real>(path: impl AsRef<Path>) -> Result<(UNet<S>, Option<Adam<S>>)> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_weights(&bytes, &path.as_ref().display().to_string())
}

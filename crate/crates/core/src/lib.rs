//! Drifted denoising diffusion for polycube generation and the downstream
//! hexahedral meshing pipeline.

pub mod codec;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod geom;
pub mod hex;
pub mod nn;
pub mod polycube;
pub mod num;
pub mod pipeline;

pub use error::{Error, Result};
pub use num::Real;

pub type Frame32 = codec::GeometryFrame<f32>;
pub type Frame64 = codec::GeometryFrame<f64>;
pub type Schedule32 = diffusion::DiffusionSchedule<f32>;
pub type Schedule64 = diffusion::DiffusionSchedule<f64>;
pub type UNet32 = nn::UNet<f32>;
pub type UNet64 = nn::UNet<f64>;

//! Perspective-layout conditioned diffusion: projected 3D boxes and road
//! polygons become masking maps that bias cross-attention inside a small
//! pixel-space denoiser.

pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod numerics;
pub mod perlcm;
pub mod pipeline;
pub mod scenegen;

pub use error::{Error, Result};

//! Temporal Gaussian kernel sequences: embedded-deformation tracking with
//! dual-quaternion blending, temporal/smoothness/photometric energies, a CPU
//! splat rasterizer, and a residual + quantization + rANS codec.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar for the common cases.

pub mod error;
pub mod geom;
pub mod graph;
pub mod kernel;
pub mod render;
pub mod scalar;
pub mod track;
pub mod codec;
pub mod energy;
pub mod synth;
pub mod io;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Kernel32 = kernel::GaussianKernel<f32>;
pub type Kernel64 = kernel::GaussianKernel<f64>;
pub type Frame32 = kernel::FrameState<f32>;
pub type Frame64 = kernel::FrameState<f64>;
pub type Graph32 = graph::EDGraph<f32>;
pub type Graph64 = graph::EDGraph<f64>;
pub type Camera32 = render::Camera<f32>;
pub type Camera64 = render::Camera<f64>;
pub type Image32 = render::Image<f32>;
pub type Image64 = render::Image<f64>;

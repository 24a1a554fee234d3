//! Structure-aware compression for 3D Gaussian splatting scenes.
//!
//! Splats that sit on 3D line priors ("sketch" splats) are replaced by
//! per-line polynomial attribute models; the remaining volumetric ("patch")
//! splats are pruned, optionally retrained against the decoded sketch set,
//! and vector-quantized. Both halves are stored in the `SKPH` container.

pub mod container;
pub mod gs;
pub mod lines;
pub mod par;
pub mod partition;
pub mod patch;
pub mod pipeline;
pub mod render;
pub mod sketch;
pub mod synth;

pub use gs::{Camera, GaussianCloud, GaussianSplat};
pub use lines::LineSegment3D;

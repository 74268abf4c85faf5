//! CPU reference implementation of object-centric 2D Gaussian splatting.
//!
//! A compact set of oriented 2D Gaussian discs is optimized against masked
//! multi-view images. A background loss drives splats outside the object mask
//! transparent, occlusion-aware pruning removes splats that never enter alpha
//! blending, and the trained model exports both splat and triangle-mesh
//! representations.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`scene`] — splat model, cameras, views, render buffers, configuration
//! * [`ingest`] — COLMAP parsing, image/mask loading, splat PLY I/O
//! * [`raster`] — differentiable tile-based forward/backward renderer
//! * [`losses`] — masked photometric, background, distortion, normal losses
//! * [`density`] — densification and the occlusion-aware pruning strategy
//! * [`trainer`] — optimization loop, optimizer, checkpointing
//! * [`mesher`] — TSDF fusion and marching-cubes mesh extraction
//! * [`metrics`] — masked PSNR/SSIM, chamfer distance, occlusion census
//! * [`synth`] — deterministic synthetic scenes for tests and demos

pub mod density;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod losses;
pub mod mesher;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod trainer;

pub use error::Error;

/// 3-vector in scene units.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix (rotation blocks, tangent frames).
pub type Mat3 = nalgebra::Matrix3<f64>;
/// Quaternion stored as (w, x, y, z).
pub type Quat = nalgebra::Vector4<f64>;

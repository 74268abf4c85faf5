//! Differentiable forward renderer for 2D Gaussian discs with front-to-back
//! alpha blending, early termination, and per-splat contribution tracking,
//! plus the analytic backward pass.

mod backward;
mod binning;
mod forward;
mod reference;
pub mod sh;

pub use backward::{render_backward, PixelAdjoints, SplatGradients};
pub use binning::{bin_splats, TileBinning, FOOTPRINT_SIGMA, LOW_PASS_PX, NEAR_PLANE, TILE_SIZE};
pub use forward::{render_forward, render_with_binning, splat_colors, RenderOptions};
pub use reference::{reference_max_weights, render_reference};

use crate::{Mat3, Vec3};

/// Per-splat alpha is clipped here to keep transmittance strictly positive.
pub const ALPHA_CLIP: f64 = 0.999;

/// Exact ray-disc intersection in splat coordinates.
///
/// Returns `(t, u, v, denom)` where `t` is the ray parameter (equals camera
/// depth for unnormalized pixel rays), `(u, v)` the intersection in units of
/// the disc scales, and `denom = dir . normal`. `None` when the ray is
/// parallel to the disc or the intersection lies in front of the near plane.
#[inline]
pub(crate) fn ray_disc_intersection(
    origin: &Vec3,
    dir: &Vec3,
    position: &Vec3,
    frame: &Mat3,
    scale: &[f64; 2],
) -> Option<(f64, f64, f64, f64)> {
    let normal = frame.column(2);
    let denom = dir.dot(&normal);
    if denom.abs() < 1e-12 {
        return None;
    }
    let delta = position - origin;
    let t = delta.dot(&normal) / denom;
    if t < NEAR_PLANE {
        return None;
    }
    let q = origin + t * dir - position;
    let u = q.dot(&frame.column(0)) / scale[0];
    let v = q.dot(&frame.column(1)) / scale[1];
    Some((t, u, v, denom))
}

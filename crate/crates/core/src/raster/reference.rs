//! Naive reference renderer: per pixel, walks every splat in depth order
//! with no tiling, no footprint boxes, and optional termination. It shares
//! only the ray-disc math definitions with the tiled path and exists to
//! cross-check binning, blending, and visibility bookkeeping.

use super::forward::{splat_colors, RenderOptions, EXPECTED_DEPTH_EPS};
use super::{ray_disc_intersection, ALPHA_CLIP, FOOTPRINT_SIGMA, NEAR_PLANE};
use crate::error::RenderError;
use crate::grid::{GridF, GridRgb};
use crate::scene::{decode, CameraView, RenderOutput, SplatSet};

/// Splats in blending order: ascending center depth, index as tie-break,
/// near-plane culled.
fn blend_order(splats: &SplatSet, camera: &CameraView) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = (0..splats.len())
        .filter_map(|i| {
            let z = camera.to_camera(&splats.position[i]).z;
            (z >= NEAR_PLANE).then_some((i, z))
        })
        .collect();
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    order
}

/// Full render through the naive path.
pub fn render_reference(
    splats: &SplatSet,
    camera: &CameraView,
    background: [f64; 3],
    options: &RenderOptions,
) -> Result<RenderOutput, RenderError> {
    let decoded = decode(splats)?;
    let order = blend_order(splats, camera);
    let colors = splat_colors(splats, camera, options.sh_degree);
    let origin = camera.center();
    let t_floor = options.transmittance_floor();
    let footprint2 = FOOTPRINT_SIGMA * FOOTPRINT_SIGMA;
    let (w, h) = (camera.width, camera.height);

    let mut out = RenderOutput {
        color: GridRgb::zeros(w, h),
        alpha: GridF::zeros(w, h),
        depth: GridF::zeros(w, h),
        expected_depth: GridF::zeros(w, h),
        normal: GridRgb::zeros(w, h),
        contributed: vec![false; splats.len()],
        contributions: None,
    };

    for y in 0..h {
        for x in 0..w {
            let dir = camera.pixel_ray(x, y);
            let mut transmittance = 1.0;
            let mut acc_alpha = 0.0;
            let mut acc_color = [0.0; 3];
            let mut acc_normal = [0.0; 3];
            let mut acc_wz = 0.0;
            let mut median = 0.0;
            let mut crossed = false;
            for &(i, _) in &order {
                let Some((t, u, v, denom)) = ray_disc_intersection(
                    &origin,
                    &dir,
                    &splats.position[i],
                    &decoded.frame[i],
                    &decoded.scale[i],
                ) else {
                    continue;
                };
                let r2 = u * u + v * v;
                if r2 > footprint2 {
                    continue;
                }
                let a = (decoded.opacity[i] * (-0.5 * r2).exp()).min(ALPHA_CLIP);
                if a < options.min_splat_alpha {
                    continue;
                }
                let weight = a * transmittance;
                acc_alpha += weight;
                for c in 0..3 {
                    acc_color[c] += weight * colors[i][c];
                }
                let flip = if denom > 0.0 { -1.0 } else { 1.0 };
                let n = decoded.frame[i].column(2);
                acc_normal[0] += weight * flip * n[0];
                acc_normal[1] += weight * flip * n[1];
                acc_normal[2] += weight * flip * n[2];
                acc_wz += weight * t;
                if !crossed && acc_alpha >= 0.5 {
                    crossed = true;
                    median = t;
                }
                out.contributed[i] = true;
                transmittance *= 1.0 - a;
                if transmittance < t_floor {
                    break;
                }
            }
            *out.color.get_mut(x, y) = [
                acc_color[0] + transmittance * background[0],
                acc_color[1] + transmittance * background[1],
                acc_color[2] + transmittance * background[2],
            ];
            *out.alpha.get_mut(x, y) = acc_alpha;
            *out.depth.get_mut(x, y) = median;
            *out.expected_depth.get_mut(x, y) = acc_wz / (acc_alpha + EXPECTED_DEPTH_EPS);
            *out.normal.get_mut(x, y) = acc_normal;
        }
    }
    Ok(out)
}

/// Maximum blend weight each splat reaches over all pixels of a view.
///
/// With `disable_termination` the walk never stops early, which exposes the
/// (tiny) weights occluded splats would receive without the opacity
/// threshold; participation under real settings is `weight > 0`.
pub fn reference_max_weights(
    splats: &SplatSet,
    camera: &CameraView,
    options: &RenderOptions,
    disable_termination: bool,
) -> Result<Vec<f64>, RenderError> {
    let decoded = decode(splats)?;
    let order = blend_order(splats, camera);
    let origin = camera.center();
    let t_floor = if disable_termination {
        -1.0
    } else {
        options.transmittance_floor()
    };
    let footprint2 = FOOTPRINT_SIGMA * FOOTPRINT_SIGMA;
    let mut max_weight = vec![0.0f64; splats.len()];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let dir = camera.pixel_ray(x, y);
            let mut transmittance = 1.0;
            for &(i, _) in &order {
                let Some((_, u, v, _)) = ray_disc_intersection(
                    &origin,
                    &dir,
                    &splats.position[i],
                    &decoded.frame[i],
                    &decoded.scale[i],
                ) else {
                    continue;
                };
                let r2 = u * u + v * v;
                if r2 > footprint2 {
                    continue;
                }
                let a = (decoded.opacity[i] * (-0.5 * r2).exp()).min(ALPHA_CLIP);
                if a < options.min_splat_alpha {
                    continue;
                }
                let weight = a * transmittance;
                max_weight[i] = max_weight[i].max(weight);
                transmittance *= 1.0 - a;
                if transmittance < t_floor {
                    break;
                }
            }
        }
    }
    Ok(max_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::render_forward;
    use crate::scene::logit;
    use crate::Vec3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub fn random_scene(seed: u64, m: usize) -> (SplatSet, CameraView) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut splats = SplatSet::with_len(m);
        for i in 0..m {
            splats.position[i] = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let q = crate::Quat::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            splats.rotation[i] = if q.norm() > 1e-3 {
                q / q.norm()
            } else {
                crate::Quat::new(1.0, 0.0, 0.0, 0.0)
            };
            splats.log_scale[i] = [
                rng.gen_range(0.05f64..0.5).ln(),
                rng.gen_range(0.05f64..0.5).ln(),
            ];
            splats.opacity_logit[i] = logit(rng.gen_range(0.05..0.95));
            splats.sh[i][0] = [
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ];
            for k in 1..16 {
                for c in 0..3 {
                    splats.sh[i][k][c] = rng.gen_range(-0.05..0.05);
                }
            }
        }
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let camera = CameraView::look_at(
            Vec3::new(4.0 * angle.cos(), 4.0 * angle.sin(), rng.gen_range(-1.0..1.0)),
            Vec3::zeros(),
            Vec3::new(0.0, 0.0, 1.0),
            40.0,
            40.0,
            32,
            32,
        );
        (splats, camera)
    }

    /// The tiled path must agree bit-for-bit with the naive walk.
    #[test]
    fn tiled_forward_matches_reference_exactly() {
        for seed in 0..20u64 {
            let (splats, camera) = random_scene(seed, 24);
            let options = RenderOptions::default();
            let bg = [0.1, 0.2, 0.3];
            let fast = render_forward(&splats, &camera, bg, &options).unwrap();
            let slow = render_reference(&splats, &camera, bg, &options).unwrap();
            assert_eq!(fast.color.data(), slow.color.data(), "seed {seed}");
            assert_eq!(fast.alpha.data(), slow.alpha.data());
            assert_eq!(fast.depth.data(), slow.depth.data());
            assert_eq!(fast.expected_depth.data(), slow.expected_depth.data());
            assert_eq!(fast.normal.data(), slow.normal.data());
            assert_eq!(fast.contributed, slow.contributed);
        }
    }

    /// Deleting never-contributing splats must leave the render bit-identical.
    #[test]
    fn removal_invariance_of_non_contributing_splats() {
        for seed in 40..48u64 {
            let (splats, camera) = random_scene(seed, 30);
            let options = RenderOptions::default();
            let bg = [0.0; 3];
            let out = render_forward(&splats, &camera, bg, &options).unwrap();
            let keep: Vec<usize> = (0..splats.len()).filter(|&i| out.contributed[i]).collect();
            if keep.len() == splats.len() {
                continue;
            }
            let pruned = splats.select(&keep);
            let out2 = render_forward(&pruned, &camera, bg, &options).unwrap();
            assert_eq!(out.color.data(), out2.color.data(), "seed {seed}");
            assert_eq!(out.alpha.data(), out2.alpha.data());
            assert_eq!(out.depth.data(), out2.depth.data());
        }
    }

    /// Front-to-back semantics: a rear splat behind a near-opaque wall gets
    /// a tiny weight without termination and exactly zero with it.
    #[test]
    fn rear_splat_weight_bounded_by_wall_transmittance() {
        let camera = CameraView::look_at(
            Vec3::new(0.0, 0.0, -4.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            32.0,
            32.0,
            32,
            32,
        );
        let mut splats = SplatSet::with_len(0);
        // Two opaque layers in front (alpha clipped at 0.999 each).
        for k in 0..2 {
            splats.push(
                Vec3::new(0.0, 0.0, -1.0 + 0.05 * k as f64),
                crate::Quat::new(1.0, 0.0, 0.0, 0.0),
                [(50.0f64).ln(); 2],
                40.0,
                [[0.0; 3]; 16],
            );
        }
        splats.push(
            Vec3::new(0.0, 0.0, 1.0),
            crate::Quat::new(1.0, 0.0, 0.0, 0.0),
            [(0.5f64).ln(); 2],
            logit(0.9),
            [[0.0; 3]; 16],
        );
        let options = RenderOptions::default();
        let w_free = reference_max_weights(&splats, &camera, &options, true).unwrap();
        // Behind two 0.999 layers: T = 1e-6, so weight <= 1e-6 * alpha.
        assert!(w_free[2] > 0.0);
        assert!(w_free[2] <= 1e-6 * 0.9 * 1.0001);
        let w_term = reference_max_weights(&splats, &camera, &options, false).unwrap();
        assert_eq!(w_term[2], 0.0);
        assert!(w_term[0] > 0.0);
    }
}

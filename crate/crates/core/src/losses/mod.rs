//! Loss terms: masked photometric, background, depth distortion, and normal
//! consistency, each returning its scalar value together with the adjoints
//! the renderer backward pass consumes.

pub mod ssim;

use crate::error::RenderError;
use crate::grid::{GridF, GridRgb};
use crate::raster::PixelAdjoints;
use crate::scene::{CameraView, ContributionList, RenderOutput, TrainConfig, TrainingView};
use crate::Vec3;
use serde::{Deserialize, Serialize};

/// Scalar loss values of one iteration.
///
/// `total = photometric + alpha * depth_distortion + beta * normal_consistency
/// + gamma * background` with the *effective* coefficients (a term disabled by
/// its warmup schedule reports 0 and contributes 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub photometric: f64,
    pub background: f64,
    pub depth_distortion: f64,
    pub normal_consistency: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.photometric.is_finite()
            && self.background.is_finite()
            && self.depth_distortion.is_finite()
            && self.normal_consistency.is_finite()
    }
}

fn check_shape<A, B>(a: &crate::grid::Grid<A>, b: &crate::grid::Grid<B>) -> Result<(), RenderError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(RenderError::ShapeMismatch {
            expected: format!("{}x{}", a.width(), a.height()),
            got: format!("{}x{}", b.width(), b.height()),
        })
    }
}

/// Background loss: mean accumulated alpha outside the object mask.
///
/// Returns the value and the per-pixel alpha adjoint `(1 - M) / (h w)`.
pub fn background_loss(alpha: &GridF, mask: &GridF) -> Result<(f64, GridF), RenderError> {
    check_shape(alpha, mask)?;
    let n = alpha.len() as f64;
    let mut adjoint = GridF::zeros(alpha.width(), alpha.height());
    let mut value = 0.0;
    for i in 0..alpha.len() {
        let free = 1.0 - mask.data()[i];
        value += alpha.data()[i] * free;
        adjoint.data_mut()[i] = free / n;
    }
    Ok((value / n, adjoint))
}

fn channel(img: &GridRgb, c: usize) -> GridF {
    GridF::from_vec(
        img.width(),
        img.height(),
        img.data().iter().map(|px| px[c]).collect(),
    )
}

/// Masked photometric loss: `(1 - lambda) L1 + lambda (1 - SSIM)` evaluated
/// on `I * M` vs `R * M`, with the adjoint with respect to the render.
///
/// The adjoint is propagated through the masking multiply, so it vanishes
/// outside the mask except for SSIM window bleed across the boundary.
pub fn photometric_masked(
    image: &GridRgb,
    render: &GridRgb,
    mask: &GridF,
    lambda: f64,
) -> Result<(f64, GridRgb), RenderError> {
    check_shape(image, render)?;
    check_shape(image, mask)?;
    let n = (image.len() * 3) as f64;
    let mut value = 0.0;
    let mut d_render = GridRgb::zeros(image.width(), image.height());
    for c in 0..3 {
        let mut gt = channel(image, c);
        let mut rc = channel(render, c);
        for i in 0..gt.len() {
            let m = mask.data()[i];
            gt.data_mut()[i] *= m;
            rc.data_mut()[i] *= m;
        }
        // L1 part.
        let mut l1 = 0.0;
        for i in 0..gt.len() {
            let diff = rc.data()[i] - gt.data()[i];
            l1 += diff.abs();
            d_render.data_mut()[i][c] +=
                (1.0 - lambda) * diff.signum() * mask.data()[i] / n;
        }
        value += (1.0 - lambda) * l1 / n;
        // D-SSIM part: 1 - mean(map).
        let s = ssim::ssim_channel(&rc, &gt);
        let mean: f64 = s.map.data().iter().sum::<f64>() / n;
        value += lambda * (1.0 / 3.0 - mean);
        let d_map = GridF::filled(gt.width(), gt.height(), -lambda / n);
        let d_rc = ssim::ssim_channel_backward(&rc, &gt, &s, &d_map);
        for i in 0..gt.len() {
            d_render.data_mut()[i][c] += d_rc.data()[i] * mask.data()[i];
        }
    }
    Ok((value, d_render))
}

/// Depth distortion of a single ray: sum over pairs of
/// `w_i w_j |z_i - z_j|`, with adjoints for the weights and depths.
pub fn depth_distortion_ray(weights: &[f64], depths: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let k = weights.len();
    let mut value = 0.0;
    let mut d_w = vec![0.0; k];
    let mut d_z = vec![0.0; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let gap = depths[i] - depths[j];
            value += weights[i] * weights[j] * gap.abs();
            d_w[i] += weights[j] * gap.abs();
            d_w[j] += weights[i] * gap.abs();
            let s = gap.signum() * weights[i] * weights[j];
            d_z[i] += s;
            d_z[j] -= s;
        }
    }
    (value, d_w, d_z)
}

/// Mean per-ray depth distortion over an image, from recorded contributions.
/// Adjoint vectors align with `contribs.entries`.
pub fn depth_distortion(contribs: &ContributionList, n_pixels: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let mut value = 0.0;
    let mut d_w = vec![0.0; contribs.entries.len()];
    let mut d_z = vec![0.0; contribs.entries.len()];
    let norm = 1.0 / n_pixels as f64;
    let mut ws: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    for pix in 0..n_pixels {
        let entries = contribs.pixel(pix);
        if entries.len() < 2 {
            continue;
        }
        ws.clear();
        zs.clear();
        ws.extend(entries.iter().map(|e| e.weight));
        zs.extend(entries.iter().map(|e| e.depth));
        let (v, dw, dz) = depth_distortion_ray(&ws, &zs);
        value += v * norm;
        let base = contribs.offsets[pix] as usize;
        for i in 0..entries.len() {
            d_w[base + i] = dw[i] * norm;
            d_z[base + i] = dz[i] * norm;
        }
    }
    (value, d_w, d_z)
}

/// Normal-consistency value and map adjoints.
pub struct NormalConsistency {
    pub value: f64,
    pub d_alpha: GridF,
    pub d_normal: GridRgb,
    pub d_expected_depth: GridF,
}

/// Normal consistency: per ray `sum_i w_i (1 - n_i . N)` where `N` comes
/// from central finite differences of the expected-depth map, averaged over
/// the image. Using the accumulated normal map `Nm = sum_i w_i n_i` and the
/// alpha map `A = sum_i w_i` this is `mean(A - Nm . N)` over pixels with a
/// well-defined `N` (interior, non-degenerate cross product).
pub fn normal_consistency(output: &RenderOutput, camera: &CameraView) -> NormalConsistency {
    let (w, h) = (camera.width, camera.height);
    let n_pixels = (w * h) as f64;
    let origin = camera.center();
    // World point per pixel from the expected depth.
    let mut points = vec![Vec3::zeros(); w * h];
    let mut rays = vec![Vec3::zeros(); w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let dir = camera.pixel_ray(x, y);
            rays[idx] = dir;
            points[idx] = origin + output.expected_depth.data()[idx] * dir;
        }
    }

    let mut value = 0.0;
    let mut d_alpha = GridF::zeros(w, h);
    let mut d_normal = GridRgb::zeros(w, h);
    let mut d_expected_depth = GridF::zeros(w, h);
    if w < 3 || h < 3 {
        return NormalConsistency {
            value,
            d_alpha,
            d_normal,
            d_expected_depth,
        };
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let idx = y * w + x;
            let tx = points[idx + 1] - points[idx - 1];
            let ty = points[idx + w] - points[idx - w];
            // Cross order chosen so N faces the camera, matching the
            // orientation of the accumulated splat normals.
            let c = ty.cross(&tx);
            let norm = c.norm();
            if norm < 1e-12 {
                continue;
            }
            let n_surf = c / norm;
            let a = output.alpha.data()[idx];
            let nm = output.normal.data()[idx];
            let nm_v = Vec3::new(nm[0], nm[1], nm[2]);
            value += (a - nm_v.dot(&n_surf)) / n_pixels;

            d_alpha.data_mut()[idx] += 1.0 / n_pixels;
            let d_n_surf = -nm_v / n_pixels;
            for ch in 0..3 {
                d_normal.data_mut()[idx][ch] += -n_surf[ch] / n_pixels;
            }
            // Through the normalization and the cross product.
            let d_c = (d_n_surf - n_surf * n_surf.dot(&d_n_surf)) / norm;
            let d_ty = tx.cross(&d_c);
            let d_tx = -ty.cross(&d_c);
            // t_x = X(x+1) - X(x-1); X = origin + ED * ray.
            d_expected_depth.data_mut()[idx + 1] += rays[idx + 1].dot(&d_tx);
            d_expected_depth.data_mut()[idx - 1] -= rays[idx - 1].dot(&d_tx);
            d_expected_depth.data_mut()[idx + w] += rays[idx + w].dot(&d_ty);
            d_expected_depth.data_mut()[idx - w] -= rays[idx - w].dot(&d_ty);
        }
    }
    NormalConsistency {
        value,
        d_alpha,
        d_normal,
        d_expected_depth,
    }
}

/// Effective loss coefficients at an iteration (warmup gating).
pub fn effective_weights(config: &TrainConfig, iteration: usize) -> (f64, f64, f64) {
    let alpha = if iteration >= config.distortion_from_iter {
        config.alpha_coeff
    } else {
        0.0
    };
    let beta = if iteration >= config.normal_from_iter {
        config.beta_coeff
    } else {
        0.0
    };
    let gamma = if config.use_masks { config.gamma_coeff } else { 0.0 };
    (alpha, beta, gamma)
}

/// Evaluates the full training loss for one rendered view and assembles the
/// per-pixel adjoints for the renderer backward pass.
pub fn total_loss(
    view: &TrainingView,
    output: &RenderOutput,
    config: &TrainConfig,
    iteration: usize,
) -> Result<(LossBreakdown, PixelAdjoints), RenderError> {
    let (alpha_w, beta_w, gamma_w) = effective_weights(config, iteration);
    let ones;
    let mask = if config.use_masks {
        &view.mask
    } else {
        ones = GridF::filled(view.mask.width(), view.mask.height(), 1.0);
        &ones
    };

    let (photometric, d_color) =
        photometric_masked(&view.image, &output.color, mask, config.lambda_dssim)?;

    let mut adjoints = PixelAdjoints {
        color: d_color,
        alpha: GridF::zeros(view.image.width(), view.image.height()),
        expected_depth: GridF::zeros(view.image.width(), view.image.height()),
        normal: GridRgb::zeros(view.image.width(), view.image.height()),
        contrib_weight: Vec::new(),
        contrib_depth: Vec::new(),
    };

    let mut background = 0.0;
    if gamma_w != 0.0 {
        let (value, d_alpha) = background_loss(&output.alpha, mask)?;
        background = value;
        for i in 0..d_alpha.len() {
            adjoints.alpha.data_mut()[i] += gamma_w * d_alpha.data()[i];
        }
    }

    let mut distortion = 0.0;
    if alpha_w != 0.0 {
        let contribs = output
            .contributions
            .as_ref()
            .ok_or(RenderError::ShapeMismatch {
                expected: "recorded contributions for the distortion term".into(),
                got: "contributions = None".into(),
            })?;
        let n_pixels = view.image.len();
        let (value, d_w, d_z) = depth_distortion(contribs, n_pixels);
        distortion = value;
        adjoints.contrib_weight = d_w;
        adjoints.contrib_depth = d_z;
        for v in &mut adjoints.contrib_weight {
            *v *= alpha_w;
        }
        for v in &mut adjoints.contrib_depth {
            *v *= alpha_w;
        }
    }

    let mut normal = 0.0;
    if beta_w != 0.0 {
        let nc = normal_consistency(output, &view.camera);
        normal = nc.value;
        for i in 0..nc.d_alpha.len() {
            adjoints.alpha.data_mut()[i] += beta_w * nc.d_alpha.data()[i];
            adjoints.expected_depth.data_mut()[i] += beta_w * nc.d_expected_depth.data()[i];
            for c in 0..3 {
                adjoints.normal.data_mut()[i][c] += beta_w * nc.d_normal.data()[i][c];
            }
        }
    }

    let breakdown = LossBreakdown {
        total: photometric + alpha_w * distortion + beta_w * normal + gamma_w * background,
        photometric,
        background,
        depth_distortion: distortion,
        normal_consistency: normal,
    };
    Ok((breakdown, adjoints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render_forward, RenderOptions};
    use crate::scene::{logit, SplatSet};
    use crate::Quat;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn background_loss_zero_for_zero_alpha_or_full_mask() {
        let alpha = GridF::zeros(4, 4);
        let mask = GridF::filled(4, 4, 0.0);
        assert_eq!(background_loss(&alpha, &mask).unwrap().0, 0.0);
        let alpha = GridF::filled(4, 4, 0.7);
        let mask = GridF::filled(4, 4, 1.0);
        assert_eq!(background_loss(&alpha, &mask).unwrap().0, 0.0);
    }

    #[test]
    fn background_loss_two_by_two_case() {
        let alpha = GridF::from_vec(2, 2, vec![1.0, 0.5, 0.0, 0.0]);
        let mask = GridF::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        let (value, adjoint) = background_loss(&alpha, &mask).unwrap();
        assert!((value - 0.125).abs() < 1e-15);
        assert_eq!(adjoint.data()[0], 0.0);
        assert_eq!(adjoint.data()[1], 0.25);
    }

    #[test]
    fn background_loss_rejects_shape_mismatch() {
        let alpha = GridF::zeros(4, 4);
        let mask = GridF::zeros(3, 4);
        assert!(background_loss(&alpha, &mask).is_err());
    }

    #[test]
    fn photometric_full_mask_equals_unmasked_and_perfect_render_is_zero() {
        let mut rng = StdRng::seed_from_u64(5);
        let (w, h) = (12, 10);
        let mut image = GridRgb::zeros(w, h);
        let mut render = GridRgb::zeros(w, h);
        for i in 0..image.len() {
            for c in 0..3 {
                image.data_mut()[i][c] = rng.gen_range(0.0..1.0);
                render.data_mut()[i][c] = rng.gen_range(0.0..1.0);
            }
        }
        let ones = GridF::filled(w, h, 1.0);
        let (masked, _) = photometric_masked(&image, &render, &ones, 0.2).unwrap();
        // Unmasked reference computed straight from the definition.
        let mut l1 = 0.0;
        let mut ssim_mean = 0.0;
        for c in 0..3 {
            let gt = channel(&image, c);
            let rc = channel(&render, c);
            for i in 0..gt.len() {
                l1 += (rc.data()[i] - gt.data()[i]).abs();
            }
            ssim_mean += ssim::ssim_channel(&rc, &gt)
                .map
                .data()
                .iter()
                .sum::<f64>();
        }
        let n = (w * h * 3) as f64;
        let reference = 0.8 * l1 / n + 0.2 * (1.0 - ssim_mean / n);
        assert!((masked - reference).abs() < 1e-12);

        let (perfect, _) = photometric_masked(&image, &image, &ones, 0.2).unwrap();
        assert!(perfect.abs() < 1e-12);

        let zeros = GridF::zeros(w, h);
        let (empty, _) = photometric_masked(&image, &render, &zeros, 0.2).unwrap();
        assert!(empty.abs() < 1e-12);
    }

    #[test]
    fn photometric_invariant_outside_mask_dilation() {
        let mut rng = StdRng::seed_from_u64(6);
        let (w, h) = (24, 20);
        let mut image = GridRgb::zeros(w, h);
        let mut render = GridRgb::zeros(w, h);
        for i in 0..image.len() {
            for c in 0..3 {
                image.data_mut()[i][c] = rng.gen_range(0.0..1.0);
                render.data_mut()[i][c] = rng.gen_range(0.0..1.0);
            }
        }
        // Mask: small box; changes farther than the SSIM window radius from
        // the mask cannot affect the loss.
        let mut mask = GridF::zeros(w, h);
        for y in 4..9 {
            for x in 4..9 {
                *mask.get_mut(x, y) = 1.0;
            }
        }
        let (before, _) = photometric_masked(&image, &render, &mask, 0.2).unwrap();
        let mut tampered = render.clone();
        for y in 0..h {
            for x in 0..w {
                // Outside the mask's 5-pixel window dilation.
                if x >= 16 {
                    *tampered.get_mut(x, y) = [rng.gen(), rng.gen(), rng.gen()];
                }
            }
        }
        let (after, _) = photometric_masked(&image, &tampered, &mask, 0.2).unwrap();
        assert!((before - after).abs() < 1e-14);
    }

    #[test]
    fn photometric_backward_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(8);
        let (w, h) = (10, 8);
        let mut image = GridRgb::zeros(w, h);
        let mut render = GridRgb::zeros(w, h);
        let mut mask = GridF::zeros(w, h);
        for i in 0..image.len() {
            for c in 0..3 {
                image.data_mut()[i][c] = rng.gen_range(0.0..1.0);
                render.data_mut()[i][c] = rng.gen_range(0.0..1.0);
            }
            mask.data_mut()[i] = if rng.gen_bool(0.6) { 1.0 } else { 0.0 };
        }
        let (_, grad) = photometric_masked(&image, &render, &mask, 0.2).unwrap();
        let eps = 1e-6;
        for i in (0..w * h).step_by(5) {
            for c in 0..3 {
                let mut rp = render.clone();
                let mut rm = render.clone();
                rp.data_mut()[i][c] += eps;
                rm.data_mut()[i][c] -= eps;
                let (vp, _) = photometric_masked(&image, &rp, &mask, 0.2).unwrap();
                let (vm, _) = photometric_masked(&image, &rm, &mask, 0.2).unwrap();
                let fd = (vp - vm) / (2.0 * eps);
                let ana = grad.data()[i][c];
                assert!(
                    (fd - ana).abs() < 1e-8,
                    "pixel {i} ch {c}: fd {fd} vs {ana}"
                );
            }
        }
    }

    #[test]
    fn depth_distortion_pinned_cases() {
        // Single contributing splat: no pairs.
        assert_eq!(depth_distortion_ray(&[0.7], &[2.0]).0, 0.0);
        // Two splats at unit gap.
        let (v, dw, dz) = depth_distortion_ray(&[0.5, 0.5], &[1.0, 2.0]);
        assert!((v - 0.25).abs() < 1e-15);
        assert!((dw[0] - 0.5).abs() < 1e-15);
        assert!((dz[0] + 0.25).abs() < 1e-15);
        assert!((dz[1] - 0.25).abs() < 1e-15);
        // Coincident depths.
        assert_eq!(depth_distortion_ray(&[0.5, 0.5], &[1.5, 1.5]).0, 0.0);
    }

    #[test]
    fn normal_consistency_aligned_and_antipodal() {
        // Fronto-parallel plane of splats facing the camera: rendered
        // normals match the depth-gradient normal, so the loss vanishes.
        let camera = CameraView::look_at(
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            20.0,
            20.0,
            16,
            16,
        );
        let mut splats = SplatSet::with_len(1);
        splats.log_scale[0] = [(5.0f64).ln(); 2];
        splats.opacity_logit[0] = logit(0.95);
        let options = RenderOptions {
            record_contributions: true,
            ..Default::default()
        };
        let out = render_forward(&splats, &camera, [0.0; 3], &options).unwrap();
        let nc = normal_consistency(&out, &camera);
        // Value = mean over rays of A * (1 - cos); aligned case ~ 0.
        assert!(
            nc.value.abs() < 1e-6,
            "aligned plane should score ~0, got {}",
            nc.value
        );

        // Antipodal: flip the rendered normal map by hand; per-ray value
        // becomes A * (1 + 1) = 2A.
        let mut flipped = out.clone();
        for px in flipped.normal.data_mut() {
            for c in 0..3 {
                px[c] = -px[c];
            }
        }
        let nc2 = normal_consistency(&flipped, &camera);
        let mean_alpha_interior: f64 = {
            let mut acc = 0.0;
            for y in 1..15 {
                for x in 1..15 {
                    acc += out.alpha.get(x, y);
                }
            }
            acc / 256.0
        };
        assert!(
            (nc2.value - 2.0 * mean_alpha_interior).abs() < 1e-6,
            "antipodal {} vs 2*meanA {}",
            nc2.value,
            2.0 * mean_alpha_interior
        );
    }

    #[test]
    fn normal_consistency_map_adjoints_match_finite_differences() {
        let camera = CameraView::look_at(
            Vec3::new(0.4, -0.3, -3.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            14.0,
            14.0,
            12,
            12,
        );
        let mut rng = StdRng::seed_from_u64(12);
        let (w, h) = (12, 12);
        let mut out = RenderOutput {
            color: GridRgb::zeros(w, h),
            alpha: GridF::zeros(w, h),
            depth: GridF::zeros(w, h),
            expected_depth: GridF::zeros(w, h),
            normal: GridRgb::zeros(w, h),
            contributed: Vec::new(),
            contributions: None,
        };
        for i in 0..w * h {
            out.alpha.data_mut()[i] = rng.gen_range(0.1..0.9);
            out.expected_depth.data_mut()[i] = rng.gen_range(2.0..4.0);
            for c in 0..3 {
                out.normal.data_mut()[i][c] = rng.gen_range(-0.6..0.6);
            }
        }
        let nc = normal_consistency(&out, &camera);
        let eps = 1e-6;
        for i in (0..w * h).step_by(7) {
            let mut op = out.clone();
            let mut om = out.clone();
            op.expected_depth.data_mut()[i] += eps;
            om.expected_depth.data_mut()[i] -= eps;
            let fd = (normal_consistency(&op, &camera).value
                - normal_consistency(&om, &camera).value)
                / (2.0 * eps);
            let ana = nc.d_expected_depth.data()[i];
            assert!(
                (fd - ana).abs() < 1e-6 * fd.abs().max(ana.abs()).max(1.0),
                "ED pixel {i}: fd {fd} vs {ana}"
            );
            let mut op = out.clone();
            let mut om = out.clone();
            op.alpha.data_mut()[i] += eps;
            om.alpha.data_mut()[i] -= eps;
            let fd = (normal_consistency(&op, &camera).value
                - normal_consistency(&om, &camera).value)
                / (2.0 * eps);
            assert!((fd - nc.d_alpha.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn breakdown_identity_and_baseline_reduction() {
        let mut rng = StdRng::seed_from_u64(14);
        let camera = CameraView::look_at(
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            18.0,
            18.0,
            16,
            16,
        );
        let mut splats = SplatSet::with_len(5);
        for i in 0..5 {
            splats.position[i] = Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            splats.log_scale[i] = [(0.3f64).ln(); 2];
            splats.opacity_logit[i] = logit(0.6);
            splats.rotation[i] = Quat::new(1.0, 0.0, 0.0, 0.0);
        }
        let options = RenderOptions {
            record_contributions: true,
            ..Default::default()
        };
        let output = render_forward(&splats, &camera, [0.0; 3], &options).unwrap();
        let mut image = GridRgb::zeros(16, 16);
        let mut mask = GridF::zeros(16, 16);
        for i in 0..image.len() {
            for c in 0..3 {
                image.data_mut()[i][c] = rng.gen_range(0.0..1.0);
            }
            mask.data_mut()[i] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        }
        let view = TrainingView {
            camera: camera.clone(),
            image,
            mask,
            index: 0,
        };
        let mut config = TrainConfig {
            distortion_from_iter: 0,
            normal_from_iter: 0,
            ..Default::default()
        };
        let (b, _) = total_loss(&view, &output, &config, 100).unwrap();
        let recomposed = b.photometric
            + config.alpha_coeff * b.depth_distortion
            + config.beta_coeff * b.normal_consistency
            + config.gamma_coeff * b.background;
        assert!((b.total - recomposed).abs() <= 1e-12 * b.total.abs().max(1.0));

        // gamma = 0 with a full mask reduces to the baseline photometric-only
        // configuration (plus regularizers).
        config.gamma_coeff = 0.0;
        let full_mask_view = TrainingView {
            mask: GridF::filled(16, 16, 1.0),
            ..view.clone()
        };
        let (b2, adj) = total_loss(&full_mask_view, &output, &config, 100).unwrap();
        assert_eq!(b2.background, 0.0);
        // Background term contributes no alpha adjoint; only the normal
        // consistency term does.
        let nc = normal_consistency(&output, &camera);
        for i in 0..adj.alpha.len() {
            assert!(
                (adj.alpha.data()[i] - config.beta_coeff * nc.d_alpha.data()[i]).abs() < 1e-15
            );
        }
    }

    /// Perfect masked render with no stray background alpha scores zero.
    #[test]
    fn perfect_masked_render_scores_zero() {
        let (w, h) = (8, 8);
        let mut mask = GridF::zeros(w, h);
        for y in 2..6 {
            for x in 2..6 {
                *mask.get_mut(x, y) = 1.0;
            }
        }
        let image = GridRgb::zeros(w, h);
        let camera = CameraView::look_at(
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            10.0,
            10.0,
            w,
            h,
        );
        let output = RenderOutput {
            color: GridRgb::zeros(w, h),
            alpha: GridF::zeros(w, h),
            depth: GridF::zeros(w, h),
            expected_depth: GridF::zeros(w, h),
            normal: GridRgb::zeros(w, h),
            contributed: Vec::new(),
            contributions: Some(ContributionList {
                entries: Vec::new(),
                offsets: vec![0; w * h + 1],
            }),
        };
        let view = TrainingView {
            camera,
            image,
            mask,
            index: 0,
        };
        let config = TrainConfig {
            distortion_from_iter: 0,
            normal_from_iter: 0,
            ..Default::default()
        };
        let (b, _) = total_loss(&view, &output, &config, 0).unwrap();
        assert!(b.total.abs() < 1e-12, "total {}", b.total);
    }
}

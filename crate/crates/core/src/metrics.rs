//! Masked image metrics, chamfer distance, and the occlusion census.

use crate::error::{MetricError, RenderError};
use crate::grid::{GridF, GridRgb};
use crate::losses::ssim::ssim_channel;
use crate::raster::{bin_splats, render_with_binning, RenderOptions};
use crate::scene::{decode, CameraView, SplatSet};
use crate::Vec3;
use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

fn check_shapes(gt: &GridRgb, render: &GridRgb, mask: &GridF) -> Result<(), MetricError> {
    if gt.same_shape(render) && gt.same_shape(mask) {
        Ok(())
    } else {
        Err(MetricError::ShapeMismatch {
            expected: format!("{}x{}", gt.width(), gt.height()),
            got: format!(
                "render {}x{}, mask {}x{}",
                render.width(),
                render.height(),
                mask.width(),
                mask.height()
            ),
        })
    }
}

/// Masked PSNR in decibels: the MSE averages the squared per-channel error
/// over masked pixels (channel mean inside the masked mean, MAX_I = 1).
/// A perfect render reports positive infinity.
pub fn masked_psnr(gt: &GridRgb, render: &GridRgb, mask: &GridF) -> Result<f64, MetricError> {
    check_shapes(gt, render, mask)?;
    let mut mask_sum = 0.0;
    let mut err = 0.0;
    for i in 0..gt.len() {
        let m = mask.data()[i];
        if m <= 0.0 {
            continue;
        }
        mask_sum += m;
        for c in 0..3 {
            let d = (gt.data()[i][c] - render.data()[i][c]) * m;
            err += d * d;
        }
    }
    if mask_sum == 0.0 {
        return Err(MetricError::EmptyMask);
    }
    let mse = err / (3.0 * mask_sum);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Standard (unmasked) PSNR; equals [`masked_psnr`] with a full mask.
pub fn psnr(gt: &GridRgb, render: &GridRgb) -> Result<f64, MetricError> {
    let ones = GridF::filled(gt.width(), gt.height(), 1.0);
    masked_psnr(gt, render, &ones)
}

fn channel(img: &GridRgb, c: usize) -> GridF {
    GridF::from_vec(
        img.width(),
        img.height(),
        img.data().iter().map(|px| px[c]).collect(),
    )
}

/// Masked SSIM: both inputs are multiplied by the mask before the windowed
/// SSIM map is computed, and the mean is taken only over mask pixels.
pub fn masked_ssim(gt: &GridRgb, render: &GridRgb, mask: &GridF) -> Result<f64, MetricError> {
    check_shapes(gt, render, mask)?;
    let valid = mask.data().iter().filter(|&&m| m > 0.0).count();
    if valid == 0 {
        return Err(MetricError::EmptyMask);
    }
    let mut acc = 0.0;
    for c in 0..3 {
        let mut a = channel(gt, c);
        let mut b = channel(render, c);
        for i in 0..a.len() {
            a.data_mut()[i] *= mask.data()[i];
            b.data_mut()[i] *= mask.data()[i];
        }
        let s = ssim_channel(&b, &a);
        for i in 0..s.map.len() {
            if mask.data()[i] > 0.0 {
                acc += s.map.data()[i];
            }
        }
    }
    Ok(acc / (3.0 * valid as f64))
}

/// Standard (unmasked) SSIM: mean of the per-channel maps over all pixels.
pub fn ssim(gt: &GridRgb, render: &GridRgb) -> Result<f64, MetricError> {
    let ones = GridF::filled(gt.width(), gt.height(), 1.0);
    masked_ssim(gt, render, &ones)
}

/// Symmetric chamfer distance between point sets, in scene units:
/// mean of the two directed mean nearest-neighbor distances.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyPointSet);
    }
    let directed = |from: &[Vec3], to: &[Vec3]| -> f64 {
        let entries: Vec<[f64; 3]> = to.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&entries)
            .expect("non-empty point set");
        let sum: f64 = from
            .iter()
            .map(|p| {
                tree.query(&[p.x, p.y, p.z])
                    .nearest_one::<SquaredEuclidean<f64>>()
                    .execute()
                    .distance
                    .sqrt()
            })
            .sum();
        sum / from.len() as f64
    };
    Ok(0.5 * (directed(a, b) + directed(b, a)))
}

/// Contribution and frustum flags ORed over a set of views.
#[derive(Debug, Clone)]
pub struct VisibilityScan {
    pub contributed: Vec<bool>,
    pub in_frustum: Vec<bool>,
}

/// Renders every view and ORs the per-splat flags; non-mutating.
pub fn visibility_scan(
    splats: &SplatSet,
    cameras: &[CameraView],
    options: &RenderOptions,
) -> Result<VisibilityScan, RenderError> {
    let decoded = decode(splats)?;
    let mut scan = VisibilityScan {
        contributed: vec![false; splats.len()],
        in_frustum: vec![false; splats.len()],
    };
    for camera in cameras {
        let binning = bin_splats(splats, &decoded, camera);
        let out = render_with_binning(splats, &decoded, &binning, camera, [0.0; 3], options);
        for i in 0..splats.len() {
            scan.contributed[i] |= out.contributed[i];
            scan.in_frustum[i] |= binning.in_frustum[i];
        }
    }
    Ok(scan)
}

/// Occlusion census over a view set, distinguishing splats that are inside
/// some frustum yet never blend from splats outside every frustum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusReport {
    pub total: usize,
    pub contributing: usize,
    /// Splats that never entered alpha blending in any view.
    pub occluded: usize,
    /// Occluded splats that were inside at least one view frustum.
    pub occluded_in_frustum: usize,
    /// Splats outside every view frustum.
    pub out_of_frustum: usize,
    /// occluded / total.
    pub ratio: f64,
}

pub fn occlusion_census(
    splats: &SplatSet,
    cameras: &[CameraView],
    options: &RenderOptions,
) -> Result<(CensusReport, VisibilityScan), RenderError> {
    let scan = visibility_scan(splats, cameras, options)?;
    let total = splats.len();
    let contributing = scan.contributed.iter().filter(|&&c| c).count();
    let occluded = total - contributing;
    let occluded_in_frustum = (0..total)
        .filter(|&i| !scan.contributed[i] && scan.in_frustum[i])
        .count();
    let out_of_frustum = scan.in_frustum.iter().filter(|&&f| !f).count();
    let report = CensusReport {
        total,
        contributing,
        occluded,
        occluded_in_frustum,
        out_of_frustum,
        ratio: if total == 0 {
            0.0
        } else {
            occluded as f64 / total as f64
        },
    };
    Ok((report, scan))
}

/// Renders the view and splats the centers of occluded splats into a red
/// overlay, the census companion visualization.
pub fn occlusion_heatmap(
    splats: &SplatSet,
    camera: &CameraView,
    occluded: &[bool],
    options: &RenderOptions,
) -> Result<GridRgb, RenderError> {
    let decoded = decode(splats)?;
    let binning = bin_splats(splats, &decoded, camera);
    let out = render_with_binning(splats, &decoded, &binning, camera, [0.0; 3], options);
    let mut img = out.color;
    let radius = 2i64;
    for (i, &occ) in occluded.iter().enumerate() {
        if !occ {
            continue;
        }
        let pc = camera.to_camera(&splats.position[i]);
        if pc.z < crate::raster::NEAR_PLANE {
            continue;
        }
        let p = camera.project_cam(&pc);
        let (px, py) = (p[0].round() as i64, p[1].round() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (x, y) = (px + dx, py + dy);
                if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
                    continue;
                }
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let px = img.get_mut(x as usize, y as usize);
                px[0] = 0.5 * px[0] + 0.5;
                px[1] *= 0.5;
                px[2] *= 0.5;
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::logit;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_rgb(rng: &mut StdRng, w: usize, h: usize) -> GridRgb {
        let mut g = GridRgb::zeros(w, h);
        for px in g.data_mut() {
            *px = [rng.gen(), rng.gen(), rng.gen()];
        }
        g
    }

    #[test]
    fn psnr_identity_reports_infinity() {
        let mut rng = StdRng::seed_from_u64(1);
        let img = random_rgb(&mut rng, 8, 8);
        let mask = GridF::filled(8, 8, 1.0);
        assert!(masked_psnr(&img, &img, &mask).unwrap().is_infinite());
    }

    #[test]
    fn psnr_uniform_error_is_twenty_db() {
        let gt = GridRgb::zeros(16, 16);
        let render = GridRgb::filled(16, 16, [0.1; 3]);
        let mask = GridF::filled(16, 16, 1.0);
        let v = masked_psnr(&gt, &render, &mask).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "psnr {v}");
    }

    #[test]
    fn masked_metrics_reduce_to_unmasked_with_full_mask() {
        let mut rng = StdRng::seed_from_u64(2);
        let gt = random_rgb(&mut rng, 20, 15);
        let render = random_rgb(&mut rng, 20, 15);
        let mask = GridF::filled(20, 15, 1.0);
        let mp = masked_psnr(&gt, &render, &mask).unwrap();
        let up = psnr(&gt, &render).unwrap();
        assert!((mp - up).abs() < 1e-9);
        let ms = masked_ssim(&gt, &render, &mask).unwrap();
        let us = ssim(&gt, &render).unwrap();
        assert!((ms - us).abs() < 1e-9);
    }

    #[test]
    fn psnr_ignores_out_of_mask_pixels_and_rejects_empty_mask() {
        let mut rng = StdRng::seed_from_u64(3);
        let gt = random_rgb(&mut rng, 12, 12);
        let render = random_rgb(&mut rng, 12, 12);
        let mut mask = GridF::zeros(12, 12);
        for y in 3..9 {
            for x in 3..9 {
                *mask.get_mut(x, y) = 1.0;
            }
        }
        let before = masked_psnr(&gt, &render, &mask).unwrap();
        let mut tampered = render.clone();
        for y in 0..12 {
            *tampered.get_mut(0, y) = [rng.gen(), rng.gen(), rng.gen()];
        }
        let after = masked_psnr(&gt, &tampered, &mask).unwrap();
        assert_eq!(before, after);

        let empty = GridF::zeros(12, 12);
        assert!(matches!(
            masked_psnr(&gt, &render, &empty),
            Err(MetricError::EmptyMask)
        ));
        assert!(matches!(
            masked_ssim(&gt, &render, &empty),
            Err(MetricError::EmptyMask)
        ));
    }

    #[test]
    fn ssim_identical_images_score_one() {
        let mut rng = StdRng::seed_from_u64(4);
        let img = random_rgb(&mut rng, 14, 14);
        let mask = GridF::filled(14, 14, 1.0);
        let s = masked_ssim(&img, &img, &mask).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    /// Window bleed at the mask boundary is slightly positive: outside-mask
    /// pixels agree exactly after masking, so the masked score sits above
    /// the unmasked map averaged over the same pixels.
    #[test]
    fn masked_ssim_edge_bleed_is_positive() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..5 {
            let (w, h) = (24, 24);
            let gt = random_rgb(&mut rng, w, h);
            let render = random_rgb(&mut rng, w, h);
            let mut mask = GridF::zeros(w, h);
            for y in 6..18 {
                for x in 6..18 {
                    *mask.get_mut(x, y) = 1.0;
                }
            }
            let masked = masked_ssim(&gt, &render, &mask).unwrap();
            let mut unmasked_mean = 0.0;
            let valid = mask.data().iter().filter(|&&m| m > 0.0).count() as f64;
            for c in 0..3 {
                let a = channel(&gt, c);
                let b = channel(&render, c);
                let s = ssim_channel(&b, &a);
                for i in 0..s.map.len() {
                    if mask.data()[i] > 0.0 {
                        unmasked_mean += s.map.data()[i];
                    }
                }
            }
            unmasked_mean /= 3.0 * valid;
            assert!(
                masked >= unmasked_mean,
                "masked {masked} < unmasked-over-valid {unmasked_mean}"
            );
        }
    }

    #[test]
    fn chamfer_pinned_cases() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0)];
        let b = vec![Vec3::new(0.0, 0.0, 1.0)];
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        assert!((chamfer_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(chamfer_distance(&a, &[]).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(6);
        let mut rand_points = |n: usize| -> Vec<Vec3> {
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect()
        };
        let a = rand_points(200);
        let b = rand_points(200);
        let fast = chamfer_distance(&a, &b).unwrap();
        let brute = |from: &[Vec3], to: &[Vec3]| -> f64 {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| (p - q).norm())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / from.len() as f64
        };
        let slow = 0.5 * (brute(&a, &b) + brute(&b, &a));
        assert!(
            (fast - slow).abs() < 1e-12,
            "kd-tree {fast} vs brute {slow}"
        );
        // Symmetry.
        let rev = chamfer_distance(&b, &a).unwrap();
        assert!((fast - rev).abs() < 1e-15);
    }

    #[test]
    fn census_toy_scene_and_planted_occluder() {
        let camera = CameraView::look_at(
            Vec3::new(0.0, 0.0, -4.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            32.0,
            32.0,
            32,
            32,
        );
        let mut splats = SplatSet::with_len(2);
        for i in 0..2 {
            splats.position[i] = Vec3::new(i as f64 * 0.4 - 0.2, 0.0, 0.0);
            splats.log_scale[i] = [(0.2f64).ln(); 2];
            splats.opacity_logit[i] = logit(0.8);
        }
        let options = RenderOptions::default();
        let (report, _) = occlusion_census(&splats, &[camera.clone()], &options).unwrap();
        assert_eq!(report.occluded, 0);
        assert_eq!(report.ratio, 0.0);

        // Wall of two clipped-opaque layers hiding one splat; another splat
        // behind the camera distinguishes the two reasons for invisibility.
        let mut splats = SplatSet::with_len(0);
        for k in 0..2 {
            splats.push(
                Vec3::new(0.0, 0.0, -1.0 + 0.05 * k as f64),
                crate::Quat::new(1.0, 0.0, 0.0, 0.0),
                [(50.0f64).ln(); 2],
                30.0,
                [[0.0; 3]; 16],
            );
        }
        splats.push(
            Vec3::new(0.0, 0.0, 1.0),
            crate::Quat::new(1.0, 0.0, 0.0, 0.0),
            [(0.4f64).ln(); 2],
            logit(0.9),
            [[0.0; 3]; 16],
        );
        splats.push(
            Vec3::new(0.0, 0.0, -20.0),
            crate::Quat::new(1.0, 0.0, 0.0, 0.0),
            [(0.4f64).ln(); 2],
            logit(0.9),
            [[0.0; 3]; 16],
        );
        let (report, scan) = occlusion_census(&splats, &[camera], &options).unwrap();
        assert_eq!(report.total, 4);
        assert_eq!(report.occluded, 2);
        assert_eq!(report.occluded_in_frustum, 1);
        assert_eq!(report.out_of_frustum, 1);
        assert!(scan.in_frustum[2] && !scan.contributed[2]);
        assert!(!scan.in_frustum[3]);
    }

    #[test]
    fn heatmap_marks_occluded_centers() {
        let camera = CameraView::look_at(
            Vec3::new(0.0, 0.0, -4.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            32.0,
            32.0,
            32,
            32,
        );
        let mut splats = SplatSet::with_len(1);
        splats.log_scale[0] = [(0.2f64).ln(); 2];
        splats.opacity_logit[0] = logit(0.8);
        let img =
            occlusion_heatmap(&splats, &camera, &[true], &RenderOptions::default()).unwrap();
        let center = img.get(16, 16);
        assert!(center[0] > 0.49, "red overlay missing: {center:?}");
    }
}

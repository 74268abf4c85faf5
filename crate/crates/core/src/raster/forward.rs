//! Tiled forward rendering.

use super::binning::{bin_splats, TileBinning, FOOTPRINT_SIGMA, TILE_SIZE};
use super::sh;
use super::{ray_disc_intersection, ALPHA_CLIP};
use crate::error::RenderError;
use crate::grid::{GridF, GridRgb};
use crate::scene::{
    decode, CameraView, Contribution, ContributionList, DecodedSplats, RenderOutput, SplatSet,
};
use crate::Vec3;
use rayon::prelude::*;

/// Knobs shared by forward, reference, and backward passes.
#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Active spherical-harmonic degree (0..=3).
    pub sh_degree: usize,
    /// Per-splat alphas below this are skipped during blending.
    pub min_splat_alpha: f64,
    /// Stop blending once transmittance drops below `1 - this`.
    pub alpha_termination_threshold: f64,
    /// Record per-pixel blending lists (required for the backward pass).
    pub record_contributions: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            sh_degree: 3,
            min_splat_alpha: 1.0 / 255.0,
            alpha_termination_threshold: 0.9999,
            record_contributions: false,
        }
    }
}

impl RenderOptions {
    #[inline]
    pub(crate) fn transmittance_floor(&self) -> f64 {
        1.0 - self.alpha_termination_threshold
    }
}

/// View-dependent per-splat colors for one camera.
pub fn splat_colors(
    splats: &SplatSet,
    camera: &CameraView,
    degree: usize,
) -> Vec<[f64; 3]> {
    let origin = camera.center();
    splats
        .position
        .iter()
        .zip(&splats.sh)
        .map(|(p, coeffs)| {
            let d = p - origin;
            let n = d.norm();
            let dir = if n > 1e-12 {
                d / n
            } else {
                Vec3::new(0.0, 0.0, 1.0)
            };
            sh::eval_color(coeffs, &dir, degree)
        })
        .collect()
}

struct RowResult {
    touched: Vec<u32>,
    entries: Vec<Contribution>,
    counts: Vec<u32>,
}

/// Normalizer guard for the blend-weighted mean depth.
pub(crate) const EXPECTED_DEPTH_EPS: f64 = 1e-12;

/// Renders one view given a precomputed binning.
pub fn render_with_binning(
    splats: &SplatSet,
    decoded: &DecodedSplats,
    binning: &TileBinning,
    camera: &CameraView,
    background: [f64; 3],
    options: &RenderOptions,
) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let m = splats.len();
    let colors = splat_colors(splats, camera, options.sh_degree);
    let origin = camera.center();
    let t_floor = options.transmittance_floor();
    let footprint2 = FOOTPRINT_SIGMA * FOOTPRINT_SIGMA;

    let mut color = GridRgb::zeros(w, h);
    let mut alpha = GridF::zeros(w, h);
    let mut depth = GridF::zeros(w, h);
    let mut expected_depth = GridF::zeros(w, h);
    let mut normal = GridRgb::zeros(w, h);

    let rows: Vec<RowResult> = color
        .data_mut()
        .par_chunks_mut(w)
        .zip(alpha.data_mut().par_chunks_mut(w))
        .zip(depth.data_mut().par_chunks_mut(w))
        .zip(expected_depth.data_mut().par_chunks_mut(w))
        .zip(normal.data_mut().par_chunks_mut(w))
        .enumerate()
        .map(|(y, ((((c_row, a_row), d_row), e_row), n_row))| {
            let mut res = RowResult {
                touched: Vec::new(),
                entries: Vec::new(),
                counts: if options.record_contributions {
                    Vec::with_capacity(w)
                } else {
                    Vec::new()
                },
            };
            let tile_row = (y / TILE_SIZE) * binning.tiles_x;
            for x in 0..w {
                let candidates = &binning.tiles[tile_row + x / TILE_SIZE];
                let dir = camera.pixel_ray(x, y);
                let mut transmittance = 1.0;
                let mut acc_alpha = 0.0;
                let mut acc_color = [0.0; 3];
                let mut acc_normal = [0.0; 3];
                let mut acc_wz = 0.0;
                let mut median = 0.0;
                let mut crossed = false;
                let mut count = 0u32;
                for &cand in candidates {
                    let i = cand as usize;
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
                    // Splat normal oriented toward the camera.
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
                    res.touched.push(cand);
                    if options.record_contributions {
                        res.entries.push(Contribution {
                            splat: cand,
                            alpha: a,
                            weight,
                            depth: t,
                        });
                        count += 1;
                    }
                    transmittance *= 1.0 - a;
                    if transmittance < t_floor {
                        break;
                    }
                }
                c_row[x] = [
                    acc_color[0] + transmittance * background[0],
                    acc_color[1] + transmittance * background[1],
                    acc_color[2] + transmittance * background[2],
                ];
                a_row[x] = acc_alpha;
                d_row[x] = median;
                e_row[x] = acc_wz / (acc_alpha + EXPECTED_DEPTH_EPS);
                n_row[x] = acc_normal;
                if options.record_contributions {
                    res.counts.push(count);
                }
            }
            res
        })
        .collect();

    let mut contributed = vec![false; m];
    for row in &rows {
        for &i in &row.touched {
            contributed[i as usize] = true;
        }
    }
    let contributions = if options.record_contributions {
        let total: usize = rows.iter().map(|r| r.entries.len()).sum();
        let mut entries = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(w * h + 1);
        offsets.push(0u32);
        let mut acc = 0u32;
        for row in &rows {
            for &c in &row.counts {
                acc += c;
                offsets.push(acc);
            }
            entries.extend_from_slice(&row.entries);
        }
        Some(ContributionList { entries, offsets })
    } else {
        None
    };

    RenderOutput {
        color,
        alpha,
        depth,
        expected_depth,
        normal,
        contributed,
        contributions,
    }
}

/// Decodes, bins, and renders one view.
pub fn render_forward(
    splats: &SplatSet,
    camera: &CameraView,
    background: [f64; 3],
    options: &RenderOptions,
) -> Result<RenderOutput, RenderError> {
    let decoded = decode(splats)?;
    let binning = bin_splats(splats, &decoded, camera);
    Ok(render_with_binning(
        splats, &decoded, &binning, camera, background, options,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::logit;

    fn test_camera(w: usize, h: usize) -> CameraView {
        CameraView::look_at(
            Vec3::new(0.0, 0.0, -4.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            w as f64,
            w as f64,
            w,
            h,
        )
    }

    #[test]
    fn empty_scene_renders_background() {
        let camera = test_camera(32, 32);
        let splats = SplatSet::default();
        let bg = [0.2, 0.4, 0.6];
        let out = render_forward(&splats, &camera, bg, &RenderOptions::default()).unwrap();
        for px in out.color.data() {
            assert_eq!(*px, bg);
        }
        assert!(out.alpha.data().iter().all(|&a| a == 0.0));
        assert!(out.depth.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn centered_opaque_splat_hits_alpha_and_color() {
        // Camera with cx at a pixel center so one ray passes exactly through
        // the splat center; there exp(0) = 1 and alpha = min(opacity, clip).
        let mut camera = test_camera(33, 33);
        camera.cx = 16.5;
        camera.cy = 16.5;
        let mut splats = SplatSet::with_len(1);
        splats.log_scale[0] = [(0.2f64).ln(); 2];
        splats.opacity_logit[0] = logit(0.95);
        // Degree-0 color 0.8 per channel.
        let dc = (0.8 - 0.5) / sh::SH_C0;
        splats.sh[0][0] = [dc; 3];

        let out = render_forward(&splats, &camera, [0.0; 3], &RenderOptions::default()).unwrap();
        let a = *out.alpha.get(16, 16);
        assert!((a - 0.95).abs() < 1e-12, "alpha {a}");
        let c = *out.color.get(16, 16);
        for ch in 0..3 {
            assert!((c[ch] - 0.95 * 0.8).abs() < 1e-12);
        }
        assert!(out.contributed[0]);
        // Median depth crosses 0.5 on that ray: camera sits 4 away.
        assert!((out.depth.get(16, 16) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn fully_occluded_rear_splat_never_contributes() {
        let camera = test_camera(64, 64);
        let mut splats = SplatSet::with_len(2);
        // Front wall: one layer of clipped alpha 0.999 leaves T = 1e-3,
        // still above the 1e-4 termination floor, so stack two layers. The
        // wall scale is huge so alpha stays clipped across the whole image.
        splats.position[0] = Vec3::new(0.0, 0.0, -1.0);
        splats.log_scale[0] = [(50.0f64).ln(); 2];
        splats.opacity_logit[0] = 30.0; // sigmoid ~ 1 -> alpha ~ clip
        splats.position[1] = Vec3::new(0.0, 0.0, 1.0);
        splats.log_scale[1] = [(0.3f64).ln(); 2];
        splats.opacity_logit[1] = logit(0.9);

        let mut splats3 = splats.clone();
        splats3.push(
            Vec3::new(0.0, 0.0, -0.9),
            crate::Quat::new(1.0, 0.0, 0.0, 0.0),
            [(50.0f64).ln(); 2],
            30.0,
            [[0.0; 3]; 16],
        );

        let out = render_forward(&splats3, &camera, [0.0; 3], &RenderOptions::default()).unwrap();
        assert!(out.contributed[0]);
        assert!(out.contributed[2]);
        // Rear splat: two layers of alpha 0.999 leave T = 1e-6 < 1e-4 floor.
        assert!(!out.contributed[1]);
    }

    #[test]
    fn blend_weights_sum_to_alpha_and_stay_bounded() {
        let camera = test_camera(32, 32);
        let mut splats = SplatSet::with_len(8);
        for i in 0..8 {
            splats.position[i] = Vec3::new(
                -0.6 + 0.2 * i as f64,
                0.1 * i as f64 - 0.3,
                -0.5 + 0.15 * i as f64,
            );
            splats.log_scale[i] = [(0.4f64).ln(), (0.25f64).ln()];
            splats.opacity_logit[i] = logit(0.3 + 0.08 * i as f64);
        }
        let options = RenderOptions {
            record_contributions: true,
            ..Default::default()
        };
        let out = render_forward(&splats, &camera, [0.0; 3], &options).unwrap();
        let contribs = out.contributions.as_ref().unwrap();
        for idx in 0..(32 * 32) {
            let sum: f64 = contribs.pixel(idx).iter().map(|c| c.weight).sum();
            let a = out.alpha.data()[idx];
            assert!((sum - a).abs() < 1e-12);
            assert!((0.0..=1.0 + 1e-12).contains(&a));
            assert!(contribs.pixel(idx).iter().all(|c| c.weight >= 0.0));
        }
    }
}

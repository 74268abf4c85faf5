//! Analytic backward pass: exact adjoint of the tiled forward render.
//!
//! Loss gradients arrive as per-pixel fields on the color, alpha,
//! expected-depth, and normal channels plus optional per-contribution
//! adjoints on blend weights and intersection depths (the depth-distortion
//! term needs those). Gradients flow to every raw splat parameter: position,
//! raw quaternion, log-scales, opacity logit, and SH coefficients.
//!
//! Accumulation is grouped into a fixed number of pixel ranges reduced in
//! order, so results are bit-identical regardless of thread count.

use super::forward::{splat_colors, RenderOptions, EXPECTED_DEPTH_EPS};
use super::sh;
use super::{ray_disc_intersection, ALPHA_CLIP, NEAR_PLANE};
use crate::error::RenderError;
use crate::grid::{GridF, GridRgb};
use crate::scene::{decode, CameraView, RenderOutput, ShCoeffs, SplatSet};
use crate::{Mat3, Quat, Vec3};
use rayon::prelude::*;

/// Fixed reduction fan-in; independent of the rayon pool size.
const GRAD_GROUPS: usize = 8;

/// Per-pixel loss gradients feeding the backward pass.
#[derive(Debug, Clone)]
pub struct PixelAdjoints {
    pub color: GridRgb,
    pub alpha: GridF,
    pub expected_depth: GridF,
    pub normal: GridRgb,
    /// dL/d blend-weight per recorded contribution (empty = zero).
    pub contrib_weight: Vec<f64>,
    /// dL/d intersection-depth per recorded contribution (empty = zero).
    pub contrib_depth: Vec<f64>,
}

impl PixelAdjoints {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: GridRgb::zeros(width, height),
            alpha: GridF::zeros(width, height),
            expected_depth: GridF::zeros(width, height),
            normal: GridRgb::zeros(width, height),
            contrib_weight: Vec::new(),
            contrib_depth: Vec::new(),
        }
    }
}

/// Gradients of the loss with respect to raw splat parameters.
#[derive(Debug, Clone)]
pub struct SplatGradients {
    pub position: Vec<Vec3>,
    pub rotation: Vec<Quat>,
    pub log_scale: Vec<[f64; 2]>,
    pub opacity_logit: Vec<f64>,
    pub sh: Vec<ShCoeffs>,
    /// Screen-space positional gradient (NDC half-units), for densification.
    pub screen: Vec<[f64; 2]>,
}

impl SplatGradients {
    fn zeros(m: usize) -> Self {
        Self {
            position: vec![Vec3::zeros(); m],
            rotation: vec![Quat::zeros(); m],
            log_scale: vec![[0.0; 2]; m],
            opacity_logit: vec![0.0; m],
            sh: vec![[[0.0; 3]; 16]; m],
            screen: vec![[0.0; 2]; m],
        }
    }
}

/// Intermediate per-splat accumulator; the quaternion and SH chains are
/// applied once per splat after reduction.
struct LocalAcc {
    position: Vec<Vec3>,
    /// dL/dR as row-major 3x3 per splat (columns are t_u, t_v, normal).
    frame: Vec<[f64; 9]>,
    log_scale: Vec<[f64; 2]>,
    opacity_logit: Vec<f64>,
    color: Vec<[f64; 3]>,
}

impl LocalAcc {
    fn zeros(m: usize) -> Self {
        Self {
            position: vec![Vec3::zeros(); m],
            frame: vec![[0.0; 9]; m],
            log_scale: vec![[0.0; 2]; m],
            opacity_logit: vec![0.0; m],
            color: vec![[0.0; 3]; m],
        }
    }

    fn add_assign(&mut self, other: &LocalAcc) {
        for i in 0..self.position.len() {
            self.position[i] += other.position[i];
            for k in 0..9 {
                self.frame[i][k] += other.frame[i][k];
            }
            self.log_scale[i][0] += other.log_scale[i][0];
            self.log_scale[i][1] += other.log_scale[i][1];
            self.opacity_logit[i] += other.opacity_logit[i];
            for c in 0..3 {
                self.color[i][c] += other.color[i][c];
            }
        }
    }
}

/// dL/d(unit quaternion) from a row-major dL/dR.
fn rotation_grad(q: &Quat, d_frame: &[f64; 9]) -> Quat {
    let n = q.norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    // Partial derivatives of R entries (row-major) per quaternion component.
    let dr_dw = [0.0, -z, y, z, 0.0, -x, -y, x, 0.0].map(|v| 2.0 * v);
    let dr_dx = [0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x].map(|v| 2.0 * v);
    let dr_dy = [-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y].map(|v| 2.0 * v);
    let dr_dz = [-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0].map(|v| 2.0 * v);
    let dot = |a: &[f64; 9]| a.iter().zip(d_frame).map(|(p, g)| p * g).sum::<f64>();
    let g_unit = Quat::new(dot(&dr_dw), dot(&dr_dx), dot(&dr_dy), dot(&dr_dz));
    // Through the normalization q_unit = q / |q|.
    let qu = Quat::new(w, x, y, z);
    (g_unit - qu * qu.dot(&g_unit)) / n
}

/// Computes parameter gradients for one rendered view.
///
/// `output` must have been produced with `record_contributions = true` for
/// the same splats, camera, and options.
pub fn render_backward(
    splats: &SplatSet,
    camera: &CameraView,
    output: &RenderOutput,
    adjoints: &PixelAdjoints,
    background: [f64; 3],
    options: &RenderOptions,
) -> Result<SplatGradients, RenderError> {
    let contribs = output
        .contributions
        .as_ref()
        .ok_or(RenderError::ShapeMismatch {
            expected: "render output with recorded contributions".into(),
            got: "contributions = None".into(),
        })?;
    let (w, h) = (camera.width, camera.height);
    let n_pixels = w * h;
    for (name, ok) in [
        ("color", adjoints.color.same_shape(&output.color)),
        ("alpha", adjoints.alpha.same_shape(&output.alpha)),
        (
            "expected_depth",
            adjoints.expected_depth.same_shape(&output.expected_depth),
        ),
        ("normal", adjoints.normal.same_shape(&output.normal)),
        (
            "contrib",
            adjoints.contrib_weight.is_empty()
                || adjoints.contrib_weight.len() == contribs.entries.len(),
        ),
        (
            "contrib_depth",
            adjoints.contrib_depth.is_empty()
                || adjoints.contrib_depth.len() == contribs.entries.len(),
        ),
    ] {
        if !ok {
            return Err(RenderError::ShapeMismatch {
                expected: format!("{name} adjoint matching the render output"),
                got: format!("{w}x{h} render"),
            });
        }
    }

    let m = splats.len();
    let decoded = decode(splats)?;
    let colors = splat_colors(splats, camera, options.sh_degree);
    let origin = camera.center();

    let group_size = n_pixels.div_ceil(GRAD_GROUPS).max(1);
    let groups: Vec<LocalAcc> = (0..GRAD_GROUPS)
        .into_par_iter()
        .map(|g| {
            let mut acc = LocalAcc::zeros(m);
            let start = g * group_size;
            let end = ((g + 1) * group_size).min(n_pixels);
            let mut t_prev = Vec::new();
            for idx in start..end {
                let entries = contribs.pixel(idx);
                if entries.is_empty() {
                    continue;
                }
                let base = contribs.offsets[idx] as usize;
                let (px, py) = (idx % w, idx / w);
                let dir = camera.pixel_ray(px, py);
                let g_color = adjoints.color.data()[idx];
                let g_alpha = adjoints.alpha.data()[idx];
                let g_ed = adjoints.expected_depth.data()[idx];
                let g_normal = adjoints.normal.data()[idx];

                t_prev.clear();
                let mut t_run = 1.0;
                let mut weighted_depth = 0.0;
                for e in entries {
                    t_prev.push(t_run);
                    t_run *= 1.0 - e.alpha;
                    weighted_depth += e.weight * e.depth;
                }
                let t_final = t_run;
                let alpha_norm = output.alpha.data()[idx] + EXPECTED_DEPTH_EPS;
                let bg_dot = g_color[0] * background[0]
                    + g_color[1] * background[1]
                    + g_color[2] * background[2];

                let mut suffix = 0.0;
                for i in (0..entries.len()).rev() {
                    let e = &entries[i];
                    let s = e.splat as usize;
                    let Some((t, u, v, denom)) = ray_disc_intersection(
                        &origin,
                        &dir,
                        &splats.position[s],
                        &decoded.frame[s],
                        &decoded.scale[s],
                    ) else {
                        continue;
                    };
                    let flip = if denom > 0.0 { -1.0 } else { 1.0 };
                    let frame = &decoded.frame[s];
                    let (tu, tv, nrm) = (frame.column(0), frame.column(1), frame.column(2));

                    // dL/d weight_i including all per-pixel channels.
                    let oriented = [flip * nrm[0], flip * nrm[1], flip * nrm[2]];
                    let mut g_w = g_alpha
                        + g_color[0] * colors[s][0]
                        + g_color[1] * colors[s][1]
                        + g_color[2] * colors[s][2]
                        + g_normal[0] * oriented[0]
                        + g_normal[1] * oriented[1]
                        + g_normal[2] * oriented[2]
                        + g_ed * (e.depth * alpha_norm - weighted_depth)
                            / (alpha_norm * alpha_norm);
                    let mut g_z = g_ed * e.weight / alpha_norm;
                    if !adjoints.contrib_weight.is_empty() {
                        g_w += adjoints.contrib_weight[base + i];
                    }
                    if !adjoints.contrib_depth.is_empty() {
                        g_z += adjoints.contrib_depth[base + i];
                    }

                    let g_alpha_i =
                        g_w * t_prev[i] - (suffix + bg_dot * t_final) / (1.0 - e.alpha);
                    suffix += g_w * e.weight;

                    // Color and normal-map channels accumulate per splat.
                    for c in 0..3 {
                        acc.color[s][c] += g_color[c] * e.weight;
                    }
                    let g_n_map = flip * e.weight;
                    acc.frame[s][2] += g_normal[0] * g_n_map;
                    acc.frame[s][5] += g_normal[1] * g_n_map;
                    acc.frame[s][8] += g_normal[2] * g_n_map;

                    // alpha = min(opacity * G, clip); the clip blocks gradient.
                    let gauss = (-0.5 * (u * u + v * v)).exp();
                    let a_raw = decoded.opacity[s] * gauss;
                    let (mut g_u, mut g_v) = (0.0, 0.0);
                    if a_raw < ALPHA_CLIP {
                        let g_gauss = g_alpha_i * decoded.opacity[s];
                        let g_opacity = g_alpha_i * gauss;
                        g_u = -g_gauss * u * gauss;
                        g_v = -g_gauss * v * gauss;
                        acc.opacity_logit[s] +=
                            g_opacity * decoded.opacity[s] * (1.0 - decoded.opacity[s]);
                    }

                    // Geometry chain shared by u, v, and depth z = t.
                    let q_vec = origin + t * dir - splats.position[s];
                    let (su, sv) = (decoded.scale[s][0], decoded.scale[s][1]);
                    let d_tu = dir.dot(&tu);
                    let d_tv = dir.dot(&tv);

                    // log-scale: du/d ls_u = -u (and likewise v).
                    acc.log_scale[s][0] += -g_u * u;
                    acc.log_scale[s][1] += -g_v * v;

                    // position: du/dp = ((d.t_u)/denom) n / s_u - t_u / s_u,
                    // dz/dp = n / denom.
                    let coeff_n = g_u * d_tu / (denom * su) + g_v * d_tv / (denom * sv)
                        + g_z / denom;
                    acc.position[s] += coeff_n * Vec3::from(nrm) - (g_u / su) * Vec3::from(tu)
                        - (g_v / sv) * Vec3::from(tv);

                    // Frame columns: direct disc-coordinate terms...
                    let g_tu = (g_u / su) * q_vec;
                    let g_tv = (g_v / sv) * q_vec;
                    // ...and the normal column via dt/dn = -q/denom.
                    let g_nrm = -(coeff_n) * q_vec;
                    for r in 0..3 {
                        acc.frame[s][r * 3] += g_tu[r];
                        acc.frame[s][r * 3 + 1] += g_tv[r];
                        acc.frame[s][r * 3 + 2] += g_nrm[r];
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = LocalAcc::zeros(m);
    for g in &groups {
        total.add_assign(g);
    }

    // Per-splat chains: quaternion, SH (with view-direction path), screen.
    let mut grads = SplatGradients::zeros(m);
    grads.position = total.position;
    grads.log_scale = total.log_scale;
    grads.opacity_logit = total.opacity_logit;
    let degree = options.sh_degree;
    for i in 0..m {
        grads.rotation[i] = rotation_grad(&splats.rotation[i], &total.frame[i]);

        let d_color = total.color[i];
        if d_color != [0.0; 3] {
            let delta = splats.position[i] - origin;
            let dist = delta.norm();
            let dir = if dist > 1e-12 {
                delta / dist
            } else {
                Vec3::new(0.0, 0.0, 1.0)
            };
            let basis = sh::basis(&dir, degree);
            let mut raw = [0.5; 3];
            for (k, b) in basis.iter().enumerate().take(sh::coeffs_for_degree(degree)) {
                for c in 0..3 {
                    raw[c] += b * splats.sh[i][k][c];
                }
            }
            let (d_sh, d_dir) = sh::eval_color_backward(&splats.sh[i], &dir, degree, &raw, &d_color);
            grads.sh[i] = d_sh;
            if dist > 1e-12 {
                grads.position[i] += (d_dir - dir * dir.dot(&d_dir)) / dist;
            }
        }

        let pc = camera.to_camera(&splats.position[i]);
        if pc.z >= NEAR_PLANE {
            let g_cam = camera.rotation * grads.position[i];
            grads.screen[i] = [
                g_cam.x * pc.z / camera.fx * (camera.width as f64 * 0.5),
                g_cam.y * pc.z / camera.fy * (camera.height as f64 * 0.5),
            ];
        }
    }
    Ok(grads)
}

/// Helper for trainers/tests: `frame` layout used by the accumulator.
#[allow(dead_code)]
fn frame_adjoint_from_columns(g_tu: Vec3, g_tv: Vec3, g_n: Vec3) -> Mat3 {
    Mat3::from_columns(&[g_tu, g_tv, g_n])
}

//! Splat model, cameras, views, render buffers, and training configuration.
//!
//! [`SplatSet`] stores raw (unconstrained) parameters in structure-of-arrays
//! layout so density control can rewrite the population as index-set
//! operations. Scales are kept in log space and opacities as pre-sigmoid
//! logits; [`decode`] maps them to the constrained geometry the renderer
//! consumes.

use crate::error::RenderError;
use crate::grid::{GridF, GridRgb};
use crate::{Mat3, Quat, Vec3};
use serde::{Deserialize, Serialize};

/// Number of spherical-harmonic coefficients per channel at max degree 3.
pub const SH_COEFF_COUNT: usize = 16;

/// Per-splat SH color coefficients, `[coeff][channel]`.
pub type ShCoeffs = [[f64; 3]; SH_COEFF_COUNT];

/// The learnable model: one oriented 2D Gaussian disc per index.
///
/// All arrays share length `len()` at all times. `rotation` holds unit
/// quaternions (w, x, y, z) defining the tangential frame: the rotation's
/// first two columns are the disc tangents and the third the disc normal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplatSet {
    pub position: Vec<Vec3>,
    pub rotation: Vec<Quat>,
    /// log(s_u), log(s_v); decoded scales are strictly positive.
    pub log_scale: Vec<[f64; 2]>,
    /// Pre-sigmoid opacity logits.
    pub opacity_logit: Vec<f64>,
    pub sh: Vec<ShCoeffs>,
    /// Accumulated screen-space positional gradient norms since last reset.
    pub grad_accum: Vec<f64>,
    /// Number of accumulation events per splat since last reset.
    pub grad_count: Vec<u32>,
    /// Largest projected footprint radius (pixels) seen since last reset.
    pub max_radius_px: Vec<f64>,
    /// Whether the splat contributed to any pixel since the last prune event.
    pub seen_since_prune: Vec<bool>,
}

impl SplatSet {
    pub fn with_len(m: usize) -> Self {
        Self {
            position: vec![Vec3::zeros(); m],
            rotation: vec![Quat::new(1.0, 0.0, 0.0, 0.0); m],
            log_scale: vec![[0.0; 2]; m],
            opacity_logit: vec![0.0; m],
            sh: vec![[[0.0; 3]; SH_COEFF_COUNT]; m],
            grad_accum: vec![0.0; m],
            grad_count: vec![0; m],
            max_radius_px: vec![0.0; m],
            seen_since_prune: vec![false; m],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.position.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// Checks the shared-length invariant; cheap, used by debug assertions
    /// and density-control bookkeeping.
    pub fn arrays_consistent(&self) -> bool {
        let m = self.position.len();
        self.rotation.len() == m
            && self.log_scale.len() == m
            && self.opacity_logit.len() == m
            && self.sh.len() == m
            && self.grad_accum.len() == m
            && self.grad_count.len() == m
            && self.max_radius_px.len() == m
            && self.seen_since_prune.len() == m
    }

    /// Keeps exactly the splats at `indices` (in the given order), preserving
    /// their parameters bit-exactly.
    pub fn select(&self, indices: &[usize]) -> SplatSet {
        let pick = |v: &mut SplatSet| {
            for &i in indices {
                v.position.push(self.position[i]);
                v.rotation.push(self.rotation[i]);
                v.log_scale.push(self.log_scale[i]);
                v.opacity_logit.push(self.opacity_logit[i]);
                v.sh.push(self.sh[i]);
                v.grad_accum.push(self.grad_accum[i]);
                v.grad_count.push(self.grad_count[i]);
                v.max_radius_px.push(self.max_radius_px[i]);
                v.seen_since_prune.push(self.seen_since_prune[i]);
            }
        };
        let mut out = SplatSet::default();
        pick(&mut out);
        out
    }

    /// Appends one splat with fresh statistics.
    pub fn push(
        &mut self,
        position: Vec3,
        rotation: Quat,
        log_scale: [f64; 2],
        opacity_logit: f64,
        sh: ShCoeffs,
    ) {
        self.position.push(position);
        self.rotation.push(rotation);
        self.log_scale.push(log_scale);
        self.opacity_logit.push(opacity_logit);
        self.sh.push(sh);
        self.grad_accum.push(0.0);
        self.grad_count.push(0);
        self.max_radius_px.push(0.0);
        self.seen_since_prune.push(false);
    }

    pub fn reset_densify_stats(&mut self) {
        self.grad_accum.iter_mut().for_each(|g| *g = 0.0);
        self.grad_count.iter_mut().for_each(|c| *c = 0);
        self.max_radius_px.iter_mut().for_each(|r| *r = 0.0);
    }
}

/// Decoded per-splat geometry: orthonormal frames, positive scales,
/// opacities in (0, 1), all finite.
#[derive(Debug, Clone)]
pub struct DecodedSplats {
    /// Rotation matrices; columns are (t_u, t_v, normal).
    pub frame: Vec<Mat3>,
    /// (s_u, s_v), strictly positive.
    pub scale: Vec<[f64; 2]>,
    /// Opacity in (0, 1).
    pub opacity: Vec<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Converts a (possibly unnormalized) quaternion to a rotation matrix with
/// columns (t_u, t_v, normal).
pub fn quat_to_frame(q: &Quat) -> Mat3 {
    let n = q.norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Decodes raw parameters into renderable geometry.
///
/// Rejects non-finite raw parameters with [`RenderError::CorruptParameter`].
pub fn decode(splats: &SplatSet) -> Result<DecodedSplats, RenderError> {
    debug_assert!(splats.arrays_consistent());
    let m = splats.len();
    let mut frame = Vec::with_capacity(m);
    let mut scale = Vec::with_capacity(m);
    let mut opacity = Vec::with_capacity(m);
    for i in 0..m {
        let corrupt = |what| RenderError::CorruptParameter { index: i, what };
        if !splats.position[i].iter().all(|v| v.is_finite()) {
            return Err(corrupt("position"));
        }
        let q = &splats.rotation[i];
        if !q.iter().all(|v| v.is_finite()) || q.norm() == 0.0 {
            return Err(corrupt("rotation"));
        }
        let ls = splats.log_scale[i];
        if !ls.iter().all(|v| v.is_finite()) {
            return Err(corrupt("log_scale"));
        }
        if !splats.opacity_logit[i].is_finite() {
            return Err(corrupt("opacity_logit"));
        }
        if !splats.sh[i].iter().flatten().all(|v| v.is_finite()) {
            return Err(corrupt("sh"));
        }
        frame.push(quat_to_frame(q));
        scale.push([ls[0].exp(), ls[1].exp()]);
        opacity.push(sigmoid(splats.opacity_logit[i]));
    }
    Ok(DecodedSplats {
        frame,
        scale,
        opacity,
    })
}

/// Pinhole camera with a world-to-camera SE(3) pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    /// Rotation block of the world-to-camera transform.
    pub rotation: Mat3,
    /// Translation block of the world-to-camera transform.
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    /// Builds a camera placed at `eye` looking at `target` with `up` hint.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right).normalize();
        // Rows of the rotation: camera x (right), y (down), z (forward).
        let rotation = Mat3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -rotation * eye;
        Self {
            rotation,
            translation,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    #[inline]
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space ray direction through the center of pixel (x, y).
    /// Unnormalized so that the ray parameter equals camera-space depth.
    #[inline]
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        let dx = (x as f64 + 0.5 - self.cx) / self.fx;
        let dy = (y as f64 + 0.5 - self.cy) / self.fy;
        self.rotation.transpose() * Vec3::new(dx, dy, 1.0)
    }

    /// Projects a camera-space point to pixel coordinates.
    #[inline]
    pub fn project_cam(&self, p_cam: &Vec3) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }

    /// Checks the rotation block is orthonormal with determinant +1.
    pub fn pose_valid(&self) -> bool {
        let r = self.rotation;
        let err = (r * r.transpose() - Mat3::identity()).norm();
        err < 1e-9 && (r.determinant() - 1.0).abs() < 1e-9 && self.fx > 0.0 && self.fy > 0.0
    }
}

/// One training input: image, binary mask, camera.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera: CameraView,
    /// h x w RGB in [0, 1].
    pub image: GridRgb,
    /// h x w binary mask; 1 where the object is present.
    pub mask: GridF,
    pub index: usize,
}

impl TrainingView {
    pub fn mask_pixel_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0.5).count()
    }
}

/// One recorded alpha-blending contribution of a splat to a pixel.
#[derive(Debug, Clone, Copy)]
pub struct Contribution {
    pub splat: u32,
    /// Per-splat alpha after the 0.999 clip.
    pub alpha: f64,
    /// Blend weight alpha * transmittance.
    pub weight: f64,
    /// Ray-disc intersection depth (camera z).
    pub depth: f64,
}

/// Per-pixel blending records, stored flattened with per-pixel ranges.
#[derive(Debug, Clone, Default)]
pub struct ContributionList {
    pub entries: Vec<Contribution>,
    /// `offsets[pixel]..offsets[pixel + 1]` indexes `entries`.
    pub offsets: Vec<u32>,
}

impl ContributionList {
    #[inline]
    pub fn pixel(&self, idx: usize) -> &[Contribution] {
        &self.entries[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }
}

/// Buffers produced by a forward render.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: GridRgb,
    /// Accumulated opacity per pixel; equals the sum of blend weights.
    pub alpha: GridF,
    /// Median depth: intersection depth where accumulated alpha first
    /// crosses 0.5; zero where it never does.
    pub depth: GridF,
    /// Blend-weighted mean intersection depth.
    pub expected_depth: GridF,
    /// Accumulated camera-facing splat normals.
    pub normal: GridRgb,
    /// True iff the splat entered alpha blending of at least one pixel with
    /// nonzero weight.
    pub contributed: Vec<bool>,
    /// Per-pixel blending records; populated when requested.
    pub contributions: Option<ContributionList>,
}

/// All schedule constants, loss coefficients, and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Depth-distortion coefficient.
    pub alpha_coeff: f64,
    /// Normal-consistency coefficient.
    pub beta_coeff: f64,
    /// Background-loss coefficient.
    pub gamma_coeff: f64,
    /// L1 / D-SSIM mix inside the photometric loss.
    pub lambda_dssim: f64,
    /// Iteration from which the depth-distortion term is active.
    pub distortion_from_iter: usize,
    /// Iteration from which the normal-consistency term is active.
    pub normal_from_iter: usize,
    /// Occlusion-prune interval; `None` selects 100 for ≤ 64 views, else 600.
    pub occlusion_prune_interval: Option<usize>,
    pub densify_interval: usize,
    pub densify_from_iter: usize,
    /// End of density control; `None` selects iterations / 2.
    pub densify_until_iter: Option<usize>,
    pub densify_grad_threshold: f64,
    /// Splats smaller than this fraction of scene extent are cloned, larger split.
    pub percent_dense: f64,
    pub opacity_reset_interval: usize,
    pub opacity_prune_threshold: f64,
    /// World-scale sanity bound as a fraction of scene extent.
    pub max_world_scale_ratio: f64,
    /// Screen-footprint sanity bound in pixels (active after first opacity reset).
    pub max_screen_radius_px: f64,
    pub sh_degree_max: usize,
    pub sh_upgrade_interval: usize,
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_sh: f64,
    pub lr_sh_rest: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    /// Stop blending once transmittance drops below 1 - this.
    pub alpha_termination_threshold: f64,
    /// Per-splat alphas below this are skipped during blending.
    pub min_splat_alpha: f64,
    pub background: [f64; 3],
    pub seed: u64,
    pub deterministic: bool,
    /// Disables mask usage entirely (photometric unmasked, gamma treated as 0).
    pub use_masks: bool,
    /// Disables occlusion-aware pruning during training.
    pub occlusion_prune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            alpha_coeff: 1000.0,
            beta_coeff: 0.05,
            gamma_coeff: 0.5,
            lambda_dssim: 0.2,
            distortion_from_iter: 3000,
            normal_from_iter: 7000,
            occlusion_prune_interval: None,
            densify_interval: 100,
            densify_from_iter: 500,
            densify_until_iter: None,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            opacity_reset_interval: 3000,
            opacity_prune_threshold: 0.005,
            max_world_scale_ratio: 0.1,
            max_screen_radius_px: 20.0,
            sh_degree_max: 3,
            sh_upgrade_interval: 1000,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh: 2.5e-3,
            lr_sh_rest: 1.25e-4,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            alpha_termination_threshold: 0.9999,
            min_splat_alpha: 1.0 / 255.0,
            background: [0.0; 3],
            seed: 0,
            deterministic: true,
            use_masks: true,
            occlusion_prune: true,
        }
    }
}

impl TrainConfig {
    /// Resolves the occlusion-prune interval for a view count.
    pub fn occlusion_interval_for(&self, n_views: usize) -> usize {
        self.occlusion_prune_interval
            .unwrap_or(if n_views <= 64 { 100 } else { 600 })
    }

    pub fn densify_until(&self) -> usize {
        self.densify_until_iter.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.densify_interval == 0
            || self.opacity_reset_interval == 0
            || self.sh_upgrade_interval == 0
            || self.occlusion_prune_interval == Some(0)
        {
            return Err("all intervals must be >= 1".into());
        }
        if self.gamma_coeff < 0.0 {
            return Err("gamma_coeff must be >= 0".into());
        }
        for (name, v) in [
            ("opacity_prune_threshold", self.opacity_prune_threshold),
            ("min_splat_alpha", self.min_splat_alpha),
            (
                "alpha_termination_threshold",
                self.alpha_termination_threshold,
            ),
        ] {
            if !(0.0 < v && v < 1.0) {
                return Err(format!("{name} must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

//! Adaptive density control: densification (clone/split), transparency
//! pruning, opacity reset, and occlusion-aware pruning.
//!
//! Every prune is a strict subset selection, so survivors keep their
//! parameters bit-exactly. Operations that rewrite the population return the
//! kept indices and the number of appended splats so the trainer can rewrite
//! optimizer rows in lockstep. The occlusion pruner consumes only the
//! contribution flags, never disc geometry, so it ports to any splat
//! dimensionality.

use crate::raster::{RenderOptions, SplatGradients, TileBinning};
use crate::scene::{sigmoid, CameraView, RenderOutput, SplatSet, TrainConfig};
use crate::Vec3;
use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};

/// Records one population rewrite for optimizer-row bookkeeping.
#[derive(Debug, Clone)]
pub struct Rewrite {
    /// Indices into the previous population, in order; survivors only.
    pub kept: Vec<usize>,
    /// Number of splats appended after the survivors (fresh optimizer rows).
    pub added: usize,
}

impl Rewrite {
    pub fn identity(m: usize) -> Self {
        Self {
            kept: (0..m).collect(),
            added: 0,
        }
    }
}

/// Outcome of one densification pass.
#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub rewrite: Rewrite,
    pub clones: usize,
    pub splits: usize,
}

/// Folds one backward pass into the per-splat statistics: accumulated
/// screen-space gradient norms for contributing splats, visibility flags,
/// and the largest projected footprint radius.
pub fn accumulate_stats(
    splats: &mut SplatSet,
    output: &RenderOutput,
    grads: &SplatGradients,
    binning: &TileBinning,
) {
    for i in 0..splats.len() {
        if output.contributed[i] {
            let g = grads.screen[i];
            splats.grad_accum[i] += (g[0] * g[0] + g[1] * g[1]).sqrt();
            splats.grad_count[i] += 1;
            splats.seen_since_prune[i] = true;
        }
        if binning.in_frustum[i] {
            splats.max_radius_px[i] = splats.max_radius_px[i].max(binning.radius_px[i]);
        }
    }
}

fn gaussian_pair(rng: &mut impl RngCore) -> (f64, f64) {
    // Box-Muller on uniform draws from the raw generator.
    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Clones small high-gradient splats and splits large ones into two children
/// at `scale / 1.6`, sampled within the parent footprint. Resets statistics.
pub fn densify(
    splats: &mut SplatSet,
    config: &TrainConfig,
    scene_extent: f64,
    rng: &mut impl RngCore,
) -> DensifyOutcome {
    let m = splats.len();
    let size_limit = config.percent_dense * scene_extent;
    let mut kept = Vec::with_capacity(m);
    let mut clone_idx = Vec::new();
    let mut split_idx = Vec::new();
    for i in 0..m {
        let mean_grad = if splats.grad_count[i] > 0 {
            splats.grad_accum[i] / splats.grad_count[i] as f64
        } else {
            0.0
        };
        let over = mean_grad > config.densify_grad_threshold;
        let large = splats.log_scale[i][0].exp().max(splats.log_scale[i][1].exp()) > size_limit;
        if over && large {
            split_idx.push(i);
        } else {
            kept.push(i);
            if over {
                clone_idx.push(i);
            }
        }
    }

    let mut next = splats.select(&kept);
    for &i in &clone_idx {
        // Clone preserves all parameters bit-exactly.
        next.push(
            splats.position[i],
            splats.rotation[i],
            splats.log_scale[i],
            splats.opacity_logit[i],
            splats.sh[i],
        );
    }
    let shrink = 1.6f64.ln();
    for &i in &split_idx {
        let frame = crate::scene::quat_to_frame(&splats.rotation[i]);
        let (su, sv) = (splats.log_scale[i][0].exp(), splats.log_scale[i][1].exp());
        for _ in 0..2 {
            let (du, dv) = gaussian_pair(rng);
            let pos = splats.position[i]
                + su * du * Vec3::from(frame.column(0))
                + sv * dv * Vec3::from(frame.column(1));
            next.push(
                pos,
                splats.rotation[i],
                [
                    splats.log_scale[i][0] - shrink,
                    splats.log_scale[i][1] - shrink,
                ],
                splats.opacity_logit[i],
                splats.sh[i],
            );
        }
    }
    next.reset_densify_stats();
    let added = next.len() - kept.len();
    *splats = next;
    DensifyOutcome {
        rewrite: Rewrite { kept, added },
        clones: clone_idx.len(),
        splits: split_idx.len(),
    }
}

/// Removes splats with decoded opacity below the prune threshold or with
/// footprints beyond the sanity bounds.
pub fn prune_transparent(
    splats: &mut SplatSet,
    config: &TrainConfig,
    scene_extent: f64,
    screen_bound_active: bool,
) -> Rewrite {
    let world_limit = config.max_world_scale_ratio * scene_extent;
    let kept: Vec<usize> = (0..splats.len())
        .filter(|&i| {
            if sigmoid(splats.opacity_logit[i]) < config.opacity_prune_threshold {
                return false;
            }
            let s = splats.log_scale[i][0].exp().max(splats.log_scale[i][1].exp());
            if s > world_limit {
                return false;
            }
            if screen_bound_active && splats.max_radius_px[i] > config.max_screen_radius_px {
                return false;
            }
            true
        })
        .collect();
    if kept.len() != splats.len() {
        *splats = splats.select(&kept);
    }
    Rewrite { kept, added: 0 }
}

/// Occlusion-aware pruning: removes every splat that never entered alpha
/// blending since the previous prune event and resets the flags of the
/// survivors. Removed splats had zero blend weight in every interval view,
/// so those renders are unchanged.
pub fn prune_occluded(splats: &mut SplatSet) -> Rewrite {
    let kept: Vec<usize> = (0..splats.len())
        .filter(|&i| splats.seen_since_prune[i])
        .collect();
    if kept.len() != splats.len() {
        *splats = splats.select(&kept);
    }
    splats.seen_since_prune.iter_mut().for_each(|s| *s = false);
    Rewrite { kept, added: 0 }
}

/// Clamps every opacity down to at most 0.01 via a logit rewrite and clears
/// the visibility flags (the occlusion-prune window restarts at a reset).
pub fn reset_opacity(splats: &mut SplatSet) {
    let cap = crate::scene::logit(0.01);
    for logit in &mut splats.opacity_logit {
        if *logit > cap {
            *logit = cap;
        }
    }
    splats.seen_since_prune.iter_mut().for_each(|s| *s = false);
}

/// Report of a post-training occlusion prune.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostPruneReport {
    pub total_before: usize,
    pub removed: usize,
    pub ratio: f64,
}

/// Renders every view, ORs the contribution flags, and removes splats that
/// never contribute. All views render bit-identically afterwards.
pub fn post_train_occlusion_prune(
    splats: &mut SplatSet,
    cameras: &[CameraView],
    options: &RenderOptions,
) -> Result<PostPruneReport, crate::error::RenderError> {
    let total_before = splats.len();
    let scan = crate::metrics::visibility_scan(splats, cameras, options)?;
    let kept: Vec<usize> = (0..splats.len()).filter(|&i| scan.contributed[i]).collect();
    let removed = total_before - kept.len();
    if removed > 0 {
        *splats = splats.select(&kept);
    }
    Ok(PostPruneReport {
        total_before,
        removed,
        ratio: if total_before == 0 {
            0.0
        } else {
            removed as f64 / total_before as f64
        },
    })
}

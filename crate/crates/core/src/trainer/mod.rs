//! Training orchestration: seeded view scheduling, optimization steps,
//! density-control scheduling, and checkpointing.
//!
//! Every run is a pure function of (views, initial state, config): view
//! order, densification randomness, and gradient reductions are all derived
//! deterministically, so the same seed reproduces a run bit-exactly and a
//! checkpoint-resumed run matches an uninterrupted one.

mod adam;
mod checkpoint;

pub use adam::{LearningRates, MomentPair, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::density;
use crate::error::TrainError;
use crate::losses::{total_loss, LossBreakdown};
use crate::raster::{bin_splats, render_backward, render_with_binning, RenderOptions};
use crate::scene::{decode, SplatSet, TrainConfig, TrainingView};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub splats: usize,
}

/// Optional session controls for checkpointing and interrupted runs.
#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    /// Stop after this iteration even if the config asks for more.
    pub stop_after: Option<usize>,
    /// Write a checkpoint every `checkpoint_interval` iterations.
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_interval: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn derive_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(salt)))
}

/// Shuffled view order for one epoch, a pure function of (seed, epoch).
fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    use rand_chacha::rand_core::RngCore;
    let mut rng = derive_rng(seed, 0x5c4ed01e ^ epoch.rotate_left(17));
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

/// 1.1 x the largest camera-center distance from their centroid, the scale
/// reference for densification thresholds and the position learning rate.
pub fn scene_extent(views: &[TrainingView]) -> f64 {
    let centers: Vec<crate::Vec3> = views.iter().map(|v| v.camera.center()).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let centroid = centers.iter().sum::<crate::Vec3>() / centers.len() as f64;
    let radius = centers
        .iter()
        .map(|c| (c - centroid).norm())
        .fold(0.0, f64::max);
    if radius > 0.0 {
        1.1 * radius
    } else {
        1.0
    }
}

fn position_lr(config: &TrainConfig, iteration: usize, extent: f64) -> f64 {
    let tau = (iteration as f64 / config.iterations.max(1) as f64).clamp(0.0, 1.0);
    let log_lr = config.lr_position.ln() * (1.0 - tau) + config.lr_position_final.ln() * tau;
    log_lr.exp() * extent
}

fn render_options(config: &TrainConfig, iteration: usize) -> RenderOptions {
    RenderOptions {
        sh_degree: (iteration / config.sh_upgrade_interval).min(config.sh_degree_max),
        min_splat_alpha: config.min_splat_alpha,
        alpha_termination_threshold: config.alpha_termination_threshold,
        record_contributions: true,
    }
}

/// Fresh training state for an initialized splat set.
pub fn new_state(init: &SplatSet, config: &TrainConfig) -> Checkpoint {
    Checkpoint {
        splats: init.clone(),
        optimizer: OptimizerState::new(init.len()),
        iteration: 0,
        seed: config.seed,
        config: config.clone(),
    }
}

/// Runs the optimization loop from `state` until `config.iterations` (or
/// `opts.stop_after`), returning the advanced state and the per-iteration
/// metrics log of this session.
pub fn run(
    views: &[TrainingView],
    mut state: Checkpoint,
    opts: &SessionOptions,
) -> Result<(Checkpoint, Vec<IterationRecord>), TrainError> {
    if views.is_empty() {
        return Err(TrainError::NoViews);
    }
    let config = state.config.clone();
    config
        .validate()
        .map_err(|m| TrainError::Checkpoint(format!("invalid config: {m}")))?;
    if config.use_masks && views.iter().all(|v| v.mask_pixel_count() == 0) {
        return Err(TrainError::AllMasksEmpty);
    }

    let n = views.len();
    let extent = scene_extent(views);
    let occ_interval = config.occlusion_interval_for(n);
    let densify_until = config.densify_until();
    let end = opts.stop_after.unwrap_or(config.iterations).min(config.iterations);
    let mut log = Vec::new();
    let mut perm: Vec<usize> = Vec::new();
    let mut perm_epoch = u64::MAX;

    while state.iteration < end {
        let i = state.iteration + 1;

        let epoch = ((i - 1) / n) as u64;
        if epoch != perm_epoch {
            perm = epoch_permutation(state.seed, epoch, n);
            perm_epoch = epoch;
        }
        let view = &views[perm[(i - 1) % n]];

        let options = render_options(&config, i);
        let decoded = decode(&state.splats)?;
        let binning = bin_splats(&state.splats, &decoded, &view.camera);
        let output = render_with_binning(
            &state.splats,
            &decoded,
            &binning,
            &view.camera,
            config.background,
            &options,
        );
        let (loss, adjoints) = total_loss(view, &output, &config, i)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration: i,
                breakdown: format!("{loss:?}"),
            });
        }
        let grads = render_backward(
            &state.splats,
            &view.camera,
            &output,
            &adjoints,
            config.background,
            &options,
        )?;
        density::accumulate_stats(&mut state.splats, &output, &grads, &binning);

        let lr = LearningRates {
            position: position_lr(&config, i, extent),
            rotation: config.lr_rotation,
            log_scale: config.lr_scale,
            opacity: config.lr_opacity,
            sh_dc: config.lr_sh,
            sh_rest: config.lr_sh_rest,
        };
        state.optimizer.step(&mut state.splats, &grads, &lr);

        // Density control, first half of training only. The occlusion prune
        // runs before densification so freshly added splats keep a full
        // interval to prove themselves.
        if i <= densify_until {
            if config.occlusion_prune && i % occ_interval == 0 {
                let rewrite = density::prune_occluded(&mut state.splats);
                state.optimizer.apply_rewrite(&rewrite);
            }
            if i >= config.densify_from_iter && i % config.densify_interval == 0 {
                let mut rng = derive_rng(state.seed, 0xdeb5 ^ i as u64);
                let outcome = density::densify(&mut state.splats, &config, extent, &mut rng);
                state.optimizer.apply_rewrite(&outcome.rewrite);
                let screen_bound_active = i > config.opacity_reset_interval;
                let rewrite = density::prune_transparent(
                    &mut state.splats,
                    &config,
                    extent,
                    screen_bound_active,
                );
                state.optimizer.apply_rewrite(&rewrite);
            }
            if i % config.opacity_reset_interval == 0 {
                density::reset_opacity(&mut state.splats);
                state.optimizer.opacity.reset();
            }
        }

        state.iteration = i;
        log.push(IterationRecord {
            iteration: i,
            loss,
            splats: state.splats.len(),
        });

        if let Some(path) = &opts.checkpoint_path {
            if opts.checkpoint_interval > 0 && i % opts.checkpoint_interval == 0 {
                save_checkpoint(path, &state)?;
            }
        }
    }
    Ok((state, log))
}

/// Convenience wrapper: trains from a fresh state to `config.iterations`.
pub fn train(
    views: &[TrainingView],
    init: &SplatSet,
    config: &TrainConfig,
) -> Result<(SplatSet, Vec<IterationRecord>), TrainError> {
    let state = new_state(init, config);
    let (state, log) = run(views, state, &SessionOptions::default())?;
    Ok((state.splats, log))
}

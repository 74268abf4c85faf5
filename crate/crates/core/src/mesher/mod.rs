//! Triangle-mesh extraction from trained splats: per-view depth rendering,
//! weighted TSDF fusion, and marching cubes.
//!
//! Two fusion modes: `bounded` takes an explicit voxel size and depth
//! truncation (plus optional mask truncation); `object` derives everything
//! from the splat bounding box and needs no user parameters.

mod marching;
mod mesh;

pub use marching::marching_cubes;
pub use mesh::{
    cull_mesh_by_masks, euler_characteristic, load_mesh_ply, sample_mesh_surface, save_mesh_obj,
    save_mesh_ply, TriangleMesh,
};

use crate::error::MeshError;
use crate::grid::GridF;
use crate::raster::{render_forward, RenderOptions, NEAR_PLANE};
use crate::scene::{CameraView, SplatSet};
use crate::Vec3;
use rayon::prelude::*;

/// Truncation band in voxels; standard TSDF convention.
pub const TRUNC_BAND_VOXELS: f64 = 5.0;
/// Default ceiling on grid size; exceeding it is a resource error.
pub const DEFAULT_VOXEL_BUDGET: usize = 64_000_000;

/// Fusion grid over lattice points `origin + index * voxel_size`, storing
/// summed truncated-distance observations, observation counts, and color.
#[derive(Debug, Clone)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    tsdf_sum: Vec<f64>,
    weight: Vec<f32>,
    color_sum: Vec<[f32; 3]>,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            origin,
            voxel_size,
            dims,
            tsdf_sum: vec![0.0; n],
            weight: vec![0.0; n],
            color_sum: vec![[0.0; 3]; n],
        }
    }

    /// Builds a weight-1 volume from an analytic signed distance function
    /// (normalized internally so |tsdf| <= 1).
    pub fn from_sdf<F: Fn(Vec3) -> f64>(
        origin: Vec3,
        voxel_size: f64,
        dims: [usize; 3],
        sdf: F,
    ) -> Self {
        let mut v = Self::new(origin, voxel_size, dims);
        let band = TRUNC_BAND_VOXELS * voxel_size;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = v.index(x, y, z);
                    let p = origin + voxel_size * Vec3::new(x as f64, y as f64, z as f64);
                    v.tsdf_sum[i] = (sdf(p) / band).clamp(-1.0, 1.0);
                    v.weight[i] = 1.0;
                }
            }
        }
        v
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn lattice_point(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + self.voxel_size * Vec3::new(x as f64, y as f64, z as f64)
    }

    /// Normalized truncated signed distance in [-1, 1]; positive in front of
    /// the surface. Meaningless where `weight` is zero.
    #[inline]
    pub fn tsdf(&self, i: usize) -> f64 {
        self.tsdf_sum[i] / self.weight[i] as f64
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weight[i] as f64
    }

    #[inline]
    pub fn color(&self, i: usize) -> [f64; 3] {
        let w = self.weight[i].max(1.0) as f64;
        [
            self.color_sum[i][0] as f64 / w,
            self.color_sum[i][1] as f64 / w,
            self.color_sum[i][2] as f64 / w,
        ]
    }

    pub fn voxel_count(&self) -> usize {
        self.tsdf_sum.len()
    }
}

/// Parameters of the bounded fusion mode.
#[derive(Debug, Clone, Copy)]
pub struct FusionParams {
    pub voxel_size: f64,
    pub d_trunc: f64,
    pub max_voxels: usize,
}

fn splat_bounds(splats: &SplatSet) -> Result<(Vec3, Vec3), MeshError> {
    if splats.is_empty() {
        return Err(MeshError::EmptySplatSet);
    }
    let mut lo = splats.position[0];
    let mut hi = splats.position[0];
    for p in &splats.position {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Ok((lo, hi))
}

fn inflate(lo: Vec3, hi: Vec3, factor: f64) -> (Vec3, Vec3) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo) * factor;
    (center - half, center + half)
}

struct DepthView {
    camera: CameraView,
    depth: GridF,
    color: crate::grid::GridRgb,
    mask: Option<GridF>,
}

fn render_depth_views(
    splats: &SplatSet,
    cameras: &[CameraView],
    masks: Option<&[GridF]>,
) -> Result<Vec<DepthView>, MeshError> {
    let options = RenderOptions::default();
    cameras
        .iter()
        .enumerate()
        .map(|(i, camera)| {
            let out = render_forward(splats, camera, [0.0; 3], &options)
                .map_err(|e| MeshError::InvalidParameter(e.to_string()))?;
            Ok(DepthView {
                camera: camera.clone(),
                depth: out.depth,
                color: out.color,
                mask: masks.map(|m| m[i].clone()),
            })
        })
        .collect()
}

fn integrate(volume: &mut TsdfVolume, views: &[DepthView], d_trunc: f64) {
    let band = TRUNC_BAND_VOXELS * volume.voxel_size;
    let dims = volume.dims;
    let origin = volume.origin;
    let voxel = volume.voxel_size;
    let plane = dims[0] * dims[1];

    volume
        .tsdf_sum
        .par_chunks_mut(plane)
        .zip(volume.weight.par_chunks_mut(plane))
        .zip(volume.color_sum.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(z, ((tsdf_slab, weight_slab), color_slab))| {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = y * dims[0] + x;
                    let p = origin + voxel * Vec3::new(x as f64, y as f64, z as f64);
                    for view in views {
                        let pc = view.camera.to_camera(&p);
                        if pc.z < NEAR_PLANE {
                            continue;
                        }
                        let px = view.camera.project_cam(&pc);
                        let (ix, iy) = (px[0].floor(), px[1].floor());
                        if ix < 0.0
                            || iy < 0.0
                            || ix >= view.camera.width as f64
                            || iy >= view.camera.height as f64
                        {
                            continue;
                        }
                        let (ix, iy) = (ix as usize, iy as usize);
                        if let Some(mask) = &view.mask {
                            if *mask.get(ix, iy) < 0.5 {
                                continue;
                            }
                        }
                        let d = *view.depth.get(ix, iy);
                        // Zero depth marks rays whose accumulated alpha never
                        // crossed 0.5; those pixels carry no surface.
                        if d <= 0.0 || d > d_trunc {
                            continue;
                        }
                        let sdf = d - pc.z;
                        if sdf < -band {
                            continue;
                        }
                        tsdf_slab[i] += (sdf / band).min(1.0);
                        weight_slab[i] += 1.0;
                        let c = view.color.get(ix, iy);
                        color_slab[i][0] += c[0] as f32;
                        color_slab[i][1] += c[1] as f32;
                        color_slab[i][2] += c[2] as f32;
                    }
                }
            }
        });
}

fn grid_for_bounds(
    lo: Vec3,
    hi: Vec3,
    voxel_size: f64,
    max_voxels: usize,
) -> Result<(Vec3, [usize; 3]), MeshError> {
    if voxel_size <= 0.0 {
        return Err(MeshError::InvalidParameter("voxel_size must be > 0".into()));
    }
    let dims = [
        ((hi.x - lo.x) / voxel_size).ceil() as usize + 2,
        ((hi.y - lo.y) / voxel_size).ceil() as usize + 2,
        ((hi.z - lo.z) / voxel_size).ceil() as usize + 2,
    ];
    let requested = dims[0]
        .saturating_mul(dims[1])
        .saturating_mul(dims[2]);
    if requested > max_voxels {
        return Err(MeshError::VoxelBudget {
            requested,
            budget: max_voxels,
        });
    }
    Ok((lo, dims))
}

/// Bounded fusion: renders median depth and color per view and integrates
/// every depth pixel with `depth <= d_trunc` (and mask = 1 when masks are
/// supplied) into the volume by weighted averaging.
pub fn fuse_bounded(
    splats: &SplatSet,
    cameras: &[CameraView],
    masks: Option<&[GridF]>,
    params: &FusionParams,
) -> Result<TsdfVolume, MeshError> {
    if params.d_trunc <= 0.0 {
        return Err(MeshError::InvalidParameter("d_trunc must be > 0".into()));
    }
    if let Some(masks) = masks {
        if masks.len() != cameras.len() {
            return Err(MeshError::InvalidParameter(format!(
                "{} masks for {} views",
                masks.len(),
                cameras.len()
            )));
        }
    }
    let (lo, hi) = splat_bounds(splats)?;
    let margin = TRUNC_BAND_VOXELS * params.voxel_size;
    let (lo, hi) = inflate(lo, hi, 1.1);
    let lo = lo - Vec3::new(margin, margin, margin);
    let hi = hi + Vec3::new(margin, margin, margin);
    let (origin, dims) = grid_for_bounds(lo, hi, params.voxel_size, params.max_voxels)?;
    let mut volume = TsdfVolume::new(origin, params.voxel_size, dims);
    let views = render_depth_views(splats, cameras, masks)?;
    integrate(&mut volume, &views, params.d_trunc);
    Ok(volume)
}

/// Object mode: parameter-free fusion over the splat bounding box, inflated
/// by 10%, with the voxel size fixed to 0.004 x the largest box extent and
/// no depth or mask truncation.
pub fn fuse_object(splats: &SplatSet, cameras: &[CameraView]) -> Result<TsdfVolume, MeshError> {
    let (lo, hi) = splat_bounds(splats)?;
    let (lo, hi) = inflate(lo, hi, 1.1);
    let extent = (hi - lo).max();
    let voxel_size = if extent > 0.0 { 0.004 * extent } else { 0.004 };
    let (origin, dims) = grid_for_bounds(lo, hi, voxel_size, DEFAULT_VOXEL_BUDGET)?;
    let mut volume = TsdfVolume::new(origin, voxel_size, dims);
    let views = render_depth_views(splats, cameras, None)?;
    integrate(&mut volume, &views, f64::INFINITY);
    Ok(volume)
}

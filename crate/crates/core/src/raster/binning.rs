//! Tile binning: conservative assignment of splats to 16x16-pixel tiles.
//!
//! A splat participates at a pixel only within its 3-sigma disc footprint
//! (see [`crate::raster::FOOTPRINT_SIGMA`]); binning computes a provably
//! conservative screen bounding box of that footprint so the tiled renderer
//! agrees exactly with a per-pixel reference walk. The box is the projection
//! bound of the ball enclosing the disc, inflated by a 0.5-pixel low-pass
//! radius, which also keeps sub-pixel discs assigned instead of dropped.

use crate::scene::{CameraView, DecodedSplats, SplatSet};

pub const TILE_SIZE: usize = 16;
/// Splats whose center depth falls below this are excluded from rendering.
pub const NEAR_PLANE: f64 = 0.01;
/// Disc footprint cutoff in units of sigma.
pub const FOOTPRINT_SIGMA: f64 = 3.0;
/// Low-pass inflation of the projected footprint, in pixels.
pub const LOW_PASS_PX: f64 = 0.5;

/// Per-camera tile assignment of candidate splats.
#[derive(Debug, Clone)]
pub struct TileBinning {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Candidate splat indices per tile, sorted by (center depth, index).
    pub tiles: Vec<Vec<u32>>,
    /// True iff the splat passed the near plane and its footprint overlaps
    /// the image.
    pub in_frustum: Vec<bool>,
    /// Conservative projected footprint radius in pixels (0 if culled).
    pub radius_px: Vec<f64>,
    /// Camera-space center depth (unset where culled).
    pub depth: Vec<f64>,
}

impl TileBinning {
    #[inline]
    pub fn tile_index(&self, tx: usize, ty: usize) -> usize {
        ty * self.tiles_x + tx
    }

    pub fn candidate_count(&self) -> usize {
        self.tiles.iter().map(|t| t.len()).sum()
    }
}

/// Screen-space half-extents bounding the projection of a ball of radius
/// `rho` centered at camera-space `pc`. Returns `None` when the ball may
/// reach the near plane (caller covers the whole image).
fn ball_extents(camera: &CameraView, pc: &crate::Vec3, rho: f64) -> Option<[f64; 2]> {
    let margin = pc.z - rho;
    if margin <= NEAR_PLANE {
        return None;
    }
    let ext_x = camera.fx * rho * (pc.z + pc.x.abs()) / (margin * pc.z);
    let ext_y = camera.fy * rho * (pc.z + pc.y.abs()) / (margin * pc.z);
    Some([ext_x, ext_y])
}

/// Bins decoded splats into tiles for one camera.
pub fn bin_splats(splats: &SplatSet, decoded: &DecodedSplats, camera: &CameraView) -> TileBinning {
    let m = splats.len();
    let tiles_x = camera.width.div_ceil(TILE_SIZE);
    let tiles_y = camera.height.div_ceil(TILE_SIZE);
    let mut binning = TileBinning {
        tiles_x,
        tiles_y,
        tiles: vec![Vec::new(); tiles_x * tiles_y],
        in_frustum: vec![false; m],
        radius_px: vec![0.0; m],
        depth: vec![0.0; m],
    };

    let w = camera.width as f64;
    let h = camera.height as f64;
    for i in 0..m {
        let pc = camera.to_camera(&splats.position[i]);
        if pc.z < NEAR_PLANE {
            continue;
        }
        let rho = FOOTPRINT_SIGMA * decoded.scale[i][0].max(decoded.scale[i][1]);
        let (x0, x1, y0, y1, radius) = match ball_extents(camera, &pc, rho) {
            Some([ex, ey]) => {
                let center = camera.project_cam(&pc);
                (
                    center[0] - ex - LOW_PASS_PX,
                    center[0] + ex + LOW_PASS_PX,
                    center[1] - ey - LOW_PASS_PX,
                    center[1] + ey + LOW_PASS_PX,
                    ex.max(ey) + LOW_PASS_PX,
                )
            }
            // Ball reaches the near plane: cover the whole image.
            None => (0.0, w, 0.0, h, w.max(h)),
        };
        if x1 < 0.0 || y1 < 0.0 || x0 >= w || y0 >= h {
            continue;
        }
        let tx0 = (x0.max(0.0) as usize) / TILE_SIZE;
        let ty0 = (y0.max(0.0) as usize) / TILE_SIZE;
        let tx1 = ((x1.min(w - 1.0)).max(0.0) as usize / TILE_SIZE).min(tiles_x - 1);
        let ty1 = ((y1.min(h - 1.0)).max(0.0) as usize / TILE_SIZE).min(tiles_y - 1);

        binning.in_frustum[i] = true;
        binning.radius_px[i] = radius;
        binning.depth[i] = pc.z;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let t = binning.tile_index(tx, ty);
                binning.tiles[t].push(i as u32);
            }
        }
    }

    for tile in &mut binning.tiles {
        tile.sort_by(|&a, &b| {
            binning.depth[a as usize]
                .partial_cmp(&binning.depth[b as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
    }
    binning
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{decode, logit, SplatSet};
    use crate::Vec3;

    fn test_camera() -> CameraView {
        CameraView::look_at(
            Vec3::new(0.0, 0.0, -4.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            64.0,
            64.0,
            64,
            64,
        )
    }

    fn one_splat(position: Vec3, scale: f64) -> SplatSet {
        let mut s = SplatSet::with_len(1);
        s.position[0] = position;
        s.log_scale[0] = [scale.ln(), scale.ln()];
        s.opacity_logit[0] = logit(0.9);
        s
    }

    #[test]
    fn splat_behind_camera_is_culled() {
        let camera = test_camera();
        let s = one_splat(Vec3::new(0.0, 0.0, -8.0), 0.1);
        let d = decode(&s).unwrap();
        let b = bin_splats(&s, &d, &camera);
        assert!(!b.in_frustum[0]);
        assert_eq!(b.candidate_count(), 0);
    }

    #[test]
    fn empty_set_gives_empty_binning() {
        let camera = test_camera();
        let s = SplatSet::default();
        let d = decode(&s).unwrap();
        let b = bin_splats(&s, &d, &camera);
        assert_eq!(b.candidate_count(), 0);
        assert!(b.in_frustum.is_empty());
    }

    /// Brute-force footprint: every pixel within the 3-sigma disc must land
    /// in a tile carrying the splat, and the assignment must stay tight.
    #[test]
    fn center_splat_tiles_match_brute_force_footprint() {
        let camera = test_camera();
        let s = one_splat(Vec3::zeros(), 0.05);
        let d = decode(&s).unwrap();
        let b = bin_splats(&s, &d, &camera);
        assert!(b.in_frustum[0]);

        let origin = camera.center();
        let frame = d.frame[0];
        let (tu, tv, n) = (frame.column(0), frame.column(1), frame.column(2));
        let mut footprint_tiles = std::collections::BTreeSet::new();
        let mut min_px = [f64::MAX; 2];
        let mut max_px = [f64::MIN; 2];
        for y in 0..camera.height {
            for x in 0..camera.width {
                let dir = camera.pixel_ray(x, y);
                let denom = dir.dot(&n);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = (s.position[0] - origin).dot(&n) / denom;
                if t < NEAR_PLANE {
                    continue;
                }
                let q = origin + t * dir - s.position[0];
                let u = q.dot(&tu) / d.scale[0][0];
                let v = q.dot(&tv) / d.scale[0][1];
                if u * u + v * v <= FOOTPRINT_SIGMA * FOOTPRINT_SIGMA {
                    footprint_tiles.insert((x / TILE_SIZE, y / TILE_SIZE));
                    min_px[0] = min_px[0].min(x as f64);
                    min_px[1] = min_px[1].min(y as f64);
                    max_px[0] = max_px[0].max(x as f64);
                    max_px[1] = max_px[1].max(y as f64);
                }
            }
        }
        assert!(!footprint_tiles.is_empty(), "test scene covers no pixels");

        // Cover: every brute-force footprint tile is assigned.
        for (tx, ty) in &footprint_tiles {
            let t = b.tile_index(*tx, *ty);
            assert!(
                b.tiles[t].contains(&0),
                "footprint tile ({tx},{ty}) missing the splat"
            );
        }
        // Tightness: assigned tiles stay within a 2-pixel margin of the
        // brute-force footprint box (low-pass inflation + bound slack).
        for (t, tile) in b.tiles.iter().enumerate() {
            if tile.is_empty() {
                continue;
            }
            let tx = (t % b.tiles_x) as f64;
            let ty = (t / b.tiles_x) as f64;
            let (x0, y0) = (tx * TILE_SIZE as f64, ty * TILE_SIZE as f64);
            let (x1, y1) = (x0 + TILE_SIZE as f64 - 1.0, y0 + TILE_SIZE as f64 - 1.0);
            let margin = 2.0;
            assert!(
                x1 >= min_px[0] - margin
                    && x0 <= max_px[0] + margin
                    && y1 >= min_px[1] - margin
                    && y0 <= max_px[1] + margin,
                "tile {t} assigned far outside the footprint"
            );
        }
    }

    #[test]
    fn tile_lists_sorted_by_depth_then_index() {
        let camera = test_camera();
        let mut s = SplatSet::with_len(3);
        // All at image center, different depths; index 2 in front.
        s.position[0] = Vec3::new(0.0, 0.0, 0.0);
        s.position[1] = Vec3::new(0.0, 0.0, 1.0);
        s.position[2] = Vec3::new(0.0, 0.0, -1.0);
        for i in 0..3 {
            s.log_scale[i] = [(0.05f64).ln(); 2];
        }
        let d = decode(&s).unwrap();
        let b = bin_splats(&s, &d, &camera);
        let center_tile = b.tile_index(
            camera.width / 2 / TILE_SIZE,
            camera.height / 2 / TILE_SIZE,
        );
        assert_eq!(b.tiles[center_tile], vec![2, 0, 1]);
    }
}

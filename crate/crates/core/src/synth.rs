//! Deterministic synthetic scenes: a textured sphere over an enclosing
//! checkerboard background, planted-occluder splat sets, and sphere scenes
//! with controlled mask defects. All generators are pure functions of their
//! seed and parameters.

use crate::grid::{GridF, GridRgb};
use crate::ingest::{ImageRecord, SparseModel};
use crate::scene::{CameraView, SplatSet, TrainingView};
use crate::{Quat, Vec3};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn unit_sphere_point(rng: &mut ChaCha8Rng) -> Vec3 {
    // Uniform over the sphere via z and azimuth.
    let z = 2.0 * uniform(rng) - 1.0;
    let phi = std::f64::consts::TAU * uniform(rng);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Checkerboard cell parity on a sphere direction.
fn checker(dir: &Vec3, tiles: usize) -> bool {
    let theta = dir.y.atan2(dir.x) + std::f64::consts::PI;
    let phi = (dir.z.clamp(-1.0, 1.0)).acos();
    let a = (theta / std::f64::consts::TAU * tiles as f64) as usize;
    let b = (phi / std::f64::consts::PI * tiles as f64) as usize;
    (a + b) % 2 == 0
}

const OBJECT_COLORS: [[f64; 3]; 2] = [[0.85, 0.35, 0.25], [0.25, 0.55, 0.85]];
const BACKGROUND_COLORS: [[f64; 3]; 2] = [[0.75, 0.75, 0.2], [0.2, 0.65, 0.45]];
const LIGHT: Vec3 = Vec3::new(0.40824829046386302, 0.40824829046386302, 0.81649658092772603);

fn shade(albedo: [f64; 3], normal: &Vec3) -> [f64; 3] {
    let l = 0.45 + 0.55 * normal.dot(&LIGHT).max(0.0);
    albedo.map(|c| c * l)
}

fn object_color(p: &Vec3, radius: f64, tiles: usize) -> [f64; 3] {
    let n = p / radius;
    let albedo = OBJECT_COLORS[checker(&n, tiles) as usize];
    shade(albedo, &n)
}

fn background_color(p: &Vec3, radius: f64, tiles: usize) -> [f64; 3] {
    let n = p / radius;
    // The background shell is seen from the inside.
    let albedo = BACKGROUND_COLORS[checker(&n, tiles * 2) as usize];
    shade(albedo, &(-n))
}

/// First ray-sphere intersection beyond `t_min`, if any.
fn ray_sphere(origin: &Vec3, dir: &Vec3, radius: f64, t_min: f64) -> Option<f64> {
    let a = dir.dot(dir);
    let b = 2.0 * origin.dot(dir);
    let c = origin.dot(origin) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
        if t > t_min {
            return Some(t);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct SphereSceneSpec {
    pub radius: f64,
    pub n_views: usize,
    pub image_size: usize,
    pub checker_tiles: usize,
    pub with_background: bool,
    /// SfM-like surface points used for splat initialization.
    pub n_object_points: usize,
    pub n_background_points: usize,
    pub seed: u64,
}

impl Default for SphereSceneSpec {
    fn default() -> Self {
        Self {
            radius: 1.0,
            n_views: 16,
            image_size: 64,
            checker_tiles: 6,
            with_background: true,
            n_object_points: 400,
            n_background_points: 700,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SphereScene {
    pub views: Vec<TrainingView>,
    /// Initialization point cloud wrapped as a sparse model (poses + points).
    pub model: SparseModel,
    /// Number of leading object points in `model.points`; the rest sit on
    /// the background shell.
    pub n_object_points: usize,
    /// Ground-truth surface samples for chamfer evaluation.
    pub surface_points: Vec<Vec3>,
    pub background_radius: f64,
}

fn ring_cameras(spec: &SphereSceneSpec) -> Vec<CameraView> {
    let distance = 4.0 * spec.radius;
    let elevation = 0.45f64;
    let w = spec.image_size;
    let fx = 0.62 * w as f64;
    (0..spec.n_views)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / spec.n_views as f64;
            let eye = Vec3::new(
                distance * elevation.cos() * phi.cos(),
                distance * elevation.cos() * phi.sin(),
                distance * elevation.sin(),
            );
            CameraView::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), fx, fx, w, w)
        })
        .collect()
}

/// Analytic render of the sphere-over-background scene for one camera:
/// returns the image and the exact object silhouette mask.
fn raycast_view(
    camera: &CameraView,
    spec: &SphereSceneSpec,
    background_radius: f64,
) -> (GridRgb, GridF) {
    let (w, h) = (camera.width, camera.height);
    let origin = camera.center();
    let mut image = GridRgb::zeros(w, h);
    let mut mask = GridF::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let dir = camera.pixel_ray(x, y);
            if let Some(t) = ray_sphere(&origin, &dir, spec.radius, 0.0) {
                let p = origin + t * dir;
                *image.get_mut(x, y) = object_color(&p, spec.radius, spec.checker_tiles);
                *mask.get_mut(x, y) = 1.0;
            } else if spec.with_background {
                // Cameras sit inside the shell, so the exit hit always exists.
                if let Some(t) = ray_sphere(&origin, &dir, background_radius, 0.0) {
                    let p = origin + t * dir;
                    *image.get_mut(x, y) =
                        background_color(&p, background_radius, spec.checker_tiles);
                }
            }
        }
    }
    (image, mask)
}

/// Builds the sphere scene: ring cameras, analytic images, exact silhouette
/// masks, an SfM-like point cloud, and ground-truth surface samples.
pub fn make_sphere_scene(spec: &SphereSceneSpec) -> SphereScene {
    assert!(spec.n_views >= 2, "need at least two views");
    let background_radius = 5.5 * spec.radius;
    let cameras = ring_cameras(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x53_59_4e_54);

    let mut views = Vec::with_capacity(spec.n_views);
    let mut records = Vec::with_capacity(spec.n_views);
    for (index, camera) in cameras.iter().enumerate() {
        let (image, mask) = raycast_view(camera, spec, background_radius);
        views.push(TrainingView {
            camera: camera.clone(),
            image,
            mask,
            index,
        });
        records.push(ImageRecord {
            name: format!("view_{index:03}.png"),
            camera: camera.clone(),
        });
    }

    // Object points: uniform surface samples with mild SfM-style jitter.
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for _ in 0..spec.n_object_points {
        let dir = unit_sphere_point(&mut rng);
        let jitter = 1.0 + 0.005 * (2.0 * uniform(&mut rng) - 1.0);
        let p = dir * spec.radius * jitter;
        colors.push(object_color(&p, spec.radius, spec.checker_tiles));
        points.push(p);
    }
    // Background points: sampled through actual pixel rays so they land on
    // the observed band of the shell.
    if spec.with_background {
        let mut placed = 0;
        while placed < spec.n_background_points {
            let v = (rng.next_u64() % spec.n_views as u64) as usize;
            let camera = &cameras[v];
            let x = (rng.next_u64() % camera.width as u64) as usize;
            let y = (rng.next_u64() % camera.height as u64) as usize;
            if *views[v].mask.get(x, y) > 0.5 {
                continue; // object pixel
            }
            let origin = camera.center();
            let dir = camera.pixel_ray(x, y);
            if let Some(t) = ray_sphere(&origin, &dir, background_radius, 0.0) {
                let p = origin + t * dir;
                colors.push(background_color(&p, background_radius, spec.checker_tiles));
                points.push(p);
                placed += 1;
            }
        }
    }

    let surface_points = (0..4000)
        .map(|_| unit_sphere_point(&mut rng) * spec.radius)
        .collect();

    SphereScene {
        views,
        model: SparseModel {
            records,
            points,
            colors,
        },
        n_object_points: spec.n_object_points,
        surface_points,
        background_radius,
    }
}

#[derive(Debug, Clone)]
pub struct OccluderScene {
    pub splats: SplatSet,
    pub cameras: Vec<CameraView>,
    /// Indices of splats planted fully behind the wall in every view.
    pub hidden: Vec<usize>,
    /// Indices of splats placed outside every view frustum.
    pub outside: Vec<usize>,
}

/// A wall of clipped-opaque discs in front of `n_hidden` splats, observed
/// from cameras that all keep the hidden splats inside their frustums. Two
/// far-away splats distinguish frustum culling from occlusion.
pub fn make_occluder_scene(n_hidden: usize, n_views: usize, seed: u64) -> OccluderScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0cc1);
    let mut splats = SplatSet::with_len(0);
    let identity = Quat::new(1.0, 0.0, 0.0, 0.0);

    // Two stacked wall layers; each clips to alpha 0.999 across the image,
    // so transmittance behind them is 1e-6, far below the 1e-4 floor.
    for k in 0..2 {
        splats.push(
            Vec3::new(0.0, 0.0, -1.0 + 0.05 * k as f64),
            identity,
            [(60.0f64).ln(); 2],
            30.0,
            [[0.0; 3]; 16],
        );
    }
    // Visible decoys in front of the wall.
    for k in 0..4 {
        let angle = std::f64::consts::TAU * k as f64 / 4.0;
        splats.push(
            Vec3::new(0.6 * angle.cos(), 0.6 * angle.sin(), -2.0),
            identity,
            [(0.25f64).ln(); 2],
            crate::scene::logit(0.7),
            [[0.0; 3]; 16],
        );
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(splats.len());
        splats.push(
            Vec3::new(
                uniform(&mut rng) - 0.5,
                uniform(&mut rng) - 0.5,
                uniform(&mut rng) * 0.8,
            ),
            identity,
            [(0.2f64).ln(); 2],
            crate::scene::logit(0.8),
            [[0.0; 3]; 16],
        );
    }
    let mut outside = Vec::new();
    for sign in [-1.0, 1.0] {
        outside.push(splats.len());
        splats.push(
            Vec3::new(300.0 * sign, 0.0, -2.5),
            identity,
            [(0.3f64).ln(); 2],
            crate::scene::logit(0.8),
            [[0.0; 3]; 16],
        );
    }

    // Cameras on the front side, all aimed at the origin so the hidden box
    // stays inside every frustum.
    let cameras = (0..n_views.max(1))
        .map(|k| {
            let spread = k as f64 / n_views.max(1) as f64 - 0.5;
            CameraView::look_at(
                Vec3::new(2.4 * spread, 1.2 * spread, -6.0),
                Vec3::zeros(),
                Vec3::new(0.0, 1.0, 0.0),
                40.0,
                40.0,
                48,
                48,
            )
        })
        .collect();

    OccluderScene {
        splats,
        cameras,
        hidden,
        outside,
    }
}

#[derive(Debug, Clone)]
pub struct DefectScene {
    pub scene: SphereScene,
    /// Per view: 1 where an object pixel was wrongly zeroed in the mask.
    pub defect_maps: Vec<GridF>,
    /// Views whose masks carry the defect.
    pub defective_views: Vec<usize>,
}

/// Sphere scene where a fraction of views carry an eroded-mask defect: all
/// mask pixels whose surface point falls inside a spherical cap are zeroed.
/// `defective_fraction = 1` yields the consistent-hole failure case.
pub fn make_erroneous_mask_scene(
    spec: &SphereSceneSpec,
    defective_fraction: f64,
    cap_direction: Vec3,
    cap_angle: f64,
) -> DefectScene {
    let mut scene = make_sphere_scene(spec);
    let n = scene.views.len();
    let n_defective = (defective_fraction * n as f64).ceil().min(n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xde_fe_c7);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let defective: Vec<usize> = order.into_iter().take(n_defective).collect();

    let cap_dir = cap_direction.normalize();
    let cos_cap = cap_angle.cos();
    let mut defect_maps = Vec::with_capacity(n);
    for (v, view) in scene.views.iter_mut().enumerate() {
        let mut defect = GridF::zeros(view.mask.width(), view.mask.height());
        if defective.contains(&v) {
            let origin = view.camera.center();
            for y in 0..view.mask.height() {
                for x in 0..view.mask.width() {
                    if *view.mask.get(x, y) < 0.5 {
                        continue;
                    }
                    let dir = view.camera.pixel_ray(x, y);
                    if let Some(t) = ray_sphere(&origin, &dir, spec.radius, 0.0) {
                        let p = (origin + t * dir).normalize();
                        if p.dot(&cap_dir) > cos_cap {
                            *view.mask.get_mut(x, y) = 0.0;
                            *defect.get_mut(x, y) = 1.0;
                        }
                    }
                }
            }
        }
        defect_maps.push(defect);
    }
    DefectScene {
        scene,
        defect_maps,
        defective_views: defective,
    }
}

/// Morphological dilation of a binary mask by a disc of `radius` pixels.
pub fn dilate_mask(mask: &GridF, radius: usize) -> GridF {
    let (w, h) = (mask.width(), mask.height());
    let r = radius as i64;
    let mut out = GridF::zeros(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut hit = false;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (sx, sy) = (x + dx, y + dy);
                    if sx >= 0
                        && sy >= 0
                        && sx < w as i64
                        && sy < h as i64
                        && *mask.get(sx as usize, sy as usize) > 0.5
                    {
                        hit = true;
                        break 'scan;
                    }
                }
            }
            *out.get_mut(x as usize, y as usize) = hit as u8 as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RenderOptions;

    fn small_spec() -> SphereSceneSpec {
        SphereSceneSpec {
            n_views: 6,
            image_size: 32,
            n_object_points: 60,
            n_background_points: 80,
            ..Default::default()
        }
    }

    #[test]
    fn masks_are_the_analytic_silhouette() {
        let scene = make_sphere_scene(&small_spec());
        for view in &scene.views {
            let origin = view.camera.center();
            for y in 0..view.mask.height() {
                for x in 0..view.mask.width() {
                    let hit = ray_sphere(&origin, &view.camera.pixel_ray(x, y), 1.0, 0.0);
                    assert_eq!(*view.mask.get(x, y) > 0.5, hit.is_some());
                }
            }
            assert!(view.mask_pixel_count() > 0);
        }
    }

    #[test]
    fn no_background_means_black_outside_silhouette() {
        let spec = SphereSceneSpec {
            with_background: false,
            n_background_points: 0,
            ..small_spec()
        };
        let scene = make_sphere_scene(&spec);
        for view in &scene.views {
            for i in 0..view.mask.len() {
                if view.mask.data()[i] < 0.5 {
                    assert_eq!(view.image.data()[i], [0.0; 3]);
                }
            }
        }
        assert_eq!(scene.model.points.len(), spec.n_object_points);
    }

    #[test]
    fn generation_is_seed_reproducible() {
        let a = make_sphere_scene(&small_spec());
        let b = make_sphere_scene(&small_spec());
        assert_eq!(a.model.points, b.model.points);
        assert_eq!(a.surface_points, b.surface_points);
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.image.data(), vb.image.data());
        }
        let c = make_sphere_scene(&SphereSceneSpec {
            seed: 9,
            ..small_spec()
        });
        assert_ne!(a.model.points, c.model.points);
    }

    #[test]
    fn occluder_scene_hides_exactly_the_planted_splats() {
        let scene = make_occluder_scene(5, 4, 3);
        let options = RenderOptions::default();
        let (report, scan) =
            crate::metrics::occlusion_census(&scene.splats, &scene.cameras, &options).unwrap();
        assert_eq!(report.occluded, 5 + 2);
        assert_eq!(report.occluded_in_frustum, 5);
        assert_eq!(report.out_of_frustum, 2);
        for &h in &scene.hidden {
            // Hidden splats sit inside every frustum; both falsity reasons
            // stay distinguishable.
            assert!(scan.in_frustum[h] && !scan.contributed[h]);
        }
        for &o in &scene.outside {
            assert!(!scan.in_frustum[o]);
        }

        let empty = make_occluder_scene(0, 3, 3);
        let (report, _) =
            crate::metrics::occlusion_census(&empty.splats, &empty.cameras, &options).unwrap();
        assert_eq!(report.occluded_in_frustum, 0);
    }

    #[test]
    fn zero_defect_rate_reduces_to_plain_scene() {
        let spec = small_spec();
        let plain = make_sphere_scene(&spec);
        let defect =
            make_erroneous_mask_scene(&spec, 0.0, Vec3::new(1.0, 0.0, 0.0), 0.3);
        assert!(defect.defective_views.is_empty());
        for (a, b) in plain.views.iter().zip(&defect.scene.views) {
            assert_eq!(a.mask.data(), b.mask.data());
        }
        assert!(defect
            .defect_maps
            .iter()
            .all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn defects_zero_object_pixels_inside_the_cap() {
        let spec = small_spec();
        let cap_dir = Vec3::new(1.0, 0.2, 0.3);
        let defect = make_erroneous_mask_scene(&spec, 0.34, cap_dir, 0.35);
        assert_eq!(defect.defective_views.len(), 3);
        let plain = make_sphere_scene(&spec);
        let mut any = false;
        for v in &defect.defective_views {
            let d = &defect.defect_maps[*v];
            let removed = d.data().iter().filter(|&&x| x > 0.0).count();
            any |= removed > 0;
            for i in 0..d.len() {
                if d.data()[i] > 0.0 {
                    // Wrongly zeroed pixels are object pixels of the clean mask.
                    assert_eq!(plain.views[*v].mask.data()[i], 1.0);
                    assert_eq!(defect.scene.views[*v].mask.data()[i], 0.0);
                }
            }
        }
        assert!(any, "cap produced no defects; enlarge angle for the test");
    }

    #[test]
    fn dilation_grows_mask() {
        let mut mask = GridF::zeros(9, 9);
        *mask.get_mut(4, 4) = 1.0;
        let grown = dilate_mask(&mask, 2);
        assert!(*grown.get(4, 4) > 0.5);
        assert!(*grown.get(6, 4) > 0.5);
        assert!(*grown.get(4, 2) > 0.5);
        assert!(*grown.get(7, 4) < 0.5);
        let count: f64 = grown.data().iter().sum();
        assert!(count > 9.0);
    }
}

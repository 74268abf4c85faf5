//! Loading COLMAP sparse reconstructions, images, and masks; splat
//! initialization; splat model file I/O.

mod colmap;
mod images;
mod splat_ply;

pub use colmap::{parse_colmap, write_colmap_binary, write_colmap_text};
pub use images::{load_png_gray, load_png_rgb, save_png_gray, save_png_rgb};
pub use splat_ply::{load_splats, save_splats};

use crate::error::IngestError;
use crate::grid::GridF;
use crate::raster::sh::SH_C0;
use crate::scene::{logit, CameraView, SplatSet, TrainingView};
use crate::{Quat, Vec3};
use kiddo::{ImmutableKdTree, SquaredEuclidean};
use std::path::Path;

/// One posed input image of a sparse reconstruction.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub name: String,
    pub camera: CameraView,
}

/// A parsed sparse reconstruction: posed images plus the SfM point cloud.
#[derive(Debug, Clone, Default)]
pub struct SparseModel {
    pub records: Vec<ImageRecord>,
    pub points: Vec<Vec3>,
    /// Point colors in [0, 1].
    pub colors: Vec<[f64; 3]>,
}

impl SparseModel {
    pub fn cameras(&self) -> Vec<CameraView> {
        self.records.iter().map(|r| r.camera.clone()).collect()
    }
}

/// Loads images (and masks, when a directory is given) for every record.
///
/// Masks are matched by filename stem, binarized at 0.5 on grayscale; a
/// missing mask directory degrades to all-ones masks.
pub fn load_views(
    model: &SparseModel,
    image_dir: &Path,
    mask_dir: Option<&Path>,
) -> Result<Vec<TrainingView>, IngestError> {
    let mut views = Vec::with_capacity(model.records.len());
    for (index, record) in model.records.iter().enumerate() {
        let image = load_png_rgb(&image_dir.join(&record.name))?;
        if image.width() != record.camera.width || image.height() != record.camera.height {
            return Err(IngestError::DimensionMismatch {
                index,
                detail: format!(
                    "image {} is {}x{}, camera expects {}x{}",
                    record.name,
                    image.width(),
                    image.height(),
                    record.camera.width,
                    record.camera.height
                ),
            });
        }
        let mask = match mask_dir {
            Some(dir) => {
                let stem = Path::new(&record.name)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| record.name.clone());
                let path = dir.join(format!("{stem}.png"));
                if !path.is_file() {
                    return Err(IngestError::MissingMask {
                        stem,
                        dir: dir.to_path_buf(),
                    });
                }
                let gray = load_png_gray(&path)?;
                if gray.width() != image.width() || gray.height() != image.height() {
                    return Err(IngestError::DimensionMismatch {
                        index,
                        detail: format!(
                            "mask {} is {}x{}, image is {}x{}",
                            path.display(),
                            gray.width(),
                            gray.height(),
                            image.width(),
                            image.height()
                        ),
                    });
                }
                gray.map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            }
            None => GridF::filled(image.width(), image.height(), 1.0),
        };
        views.push(TrainingView {
            camera: record.camera.clone(),
            image,
            mask,
            index,
        });
    }
    Ok(views)
}

/// Creates one splat per sparse point: position at the point, degree-0 SH
/// from the point color, opacity 0.1, identity rotation, isotropic scale set
/// to the mean distance to the 3 nearest points.
pub fn init_splats(model: &SparseModel) -> Result<SplatSet, IngestError> {
    init_splats_from_points(&model.points, &model.colors)
}

pub fn init_splats_from_points(
    points: &[Vec3],
    colors: &[[f64; 3]],
) -> Result<SplatSet, IngestError> {
    let p = points.len();
    if p == 0 {
        return Err(IngestError::EmptyPointCloud);
    }
    assert_eq!(points.len(), colors.len(), "point/color length mismatch");

    // Degenerate-kNN fallback: 0.01 x scene extent (bbox diagonal, floored
    // at 1 so a single point still gets a positive scale).
    let (mut lo, mut hi) = (points[0], points[0]);
    for q in points {
        lo = lo.inf(q);
        hi = hi.sup(q);
    }
    let extent = (hi - lo).norm().max(1.0);
    let fallback = 0.01 * extent;

    let scales: Vec<f64> = if p >= 2 {
        let entries: Vec<[f64; 3]> = points.iter().map(|q| [q.x, q.y, q.z]).collect();
        let tree: ImmutableKdTree<f64, 3> =
            ImmutableKdTree::new_from_slice(&entries).expect("non-empty");
        let k = std::num::NonZero::new(p.min(4)).unwrap();
        points
            .iter()
            .map(|q| {
                let hits = tree
                    .query(&[q.x, q.y, q.z])
                    .nearest_n::<SquaredEuclidean<f64>>(k)
                    .execute();
                // Skip the self-match at distance zero; average the rest.
                let mut sum = 0.0;
                let mut count = 0usize;
                for h in hits.iter().skip(1) {
                    sum += h.distance.sqrt();
                    count += 1;
                }
                if count == 0 || sum == 0.0 {
                    fallback
                } else {
                    sum / count as f64
                }
            })
            .collect()
    } else {
        vec![fallback; p]
    };

    let mut splats = SplatSet::with_len(0);
    for i in 0..p {
        let mut sh = [[0.0; 3]; 16];
        for c in 0..3 {
            sh[0][c] = (colors[i][c] - 0.5) / SH_C0;
        }
        splats.push(
            points[i],
            Quat::new(1.0, 0.0, 0.0, 0.0),
            [scales[i].ln(), scales[i].ln()],
            logit(0.1),
            sh,
        );
    }
    Ok(splats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{decode, sigmoid};

    #[test]
    fn init_creates_one_splat_per_point_with_conventions() {
        let points = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let colors = vec![[1.0, 0.0, 0.0]; 3];
        let splats = init_splats_from_points(&points, &colors).unwrap();
        assert_eq!(splats.len(), 3);
        assert!(splats.arrays_consistent());
        let decoded = decode(&splats).unwrap();
        assert!((sigmoid(splats.opacity_logit[0]) - 0.1).abs() < 1e-12);
        // Degree-0 coefficient inverts the constant-SH evaluation: a point
        // color (1, 0, 0) round-trips through eval_sh_color.
        let evaluated = crate::raster::sh::eval_color(
            &splats.sh[0],
            &Vec3::new(0.0, 0.0, 1.0),
            0,
        );
        assert!((evaluated[0] - 1.0).abs() < 1e-12);
        assert!(evaluated[1].abs() < 1e-12);
        // kNN scale: point 0 has neighbors at distance 1 and 1.
        assert!((decoded.scale[0][0] - 1.0).abs() < 1e-9);
        assert!(decoded.scale.iter().all(|s| s[0] > 0.0));
    }

    #[test]
    fn single_point_falls_back_to_extent_scale() {
        let splats =
            init_splats_from_points(&[Vec3::new(5.0, 5.0, 5.0)], &[[0.5; 3]]).unwrap();
        // Zero extent floors at 1, so the fallback scale is 0.01.
        assert!((splats.log_scale[0][0].exp() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn empty_point_cloud_is_an_error() {
        assert!(matches!(
            init_splats_from_points(&[], &[]),
            Err(IngestError::EmptyPointCloud)
        ));
    }
}

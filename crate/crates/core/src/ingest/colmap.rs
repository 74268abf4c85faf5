//! COLMAP sparse model reader/writer (text and binary layouts).
//!
//! Supported camera models: SIMPLE_PINHOLE, PINHOLE, SIMPLE_RADIAL (the
//! radial coefficient is ignored; images are assumed undistorted upstream).

use super::{ImageRecord, SparseModel};
use crate::error::IngestError;
use crate::scene::CameraView;
use crate::{Mat3, Vec3};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy)]
struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

fn model_intrinsics(
    camera_id: u32,
    model: &str,
    width: usize,
    height: usize,
    params: &[f64],
) -> Result<Intrinsics, IngestError> {
    let make = |fx, fy, cx, cy| Intrinsics {
        fx,
        fy,
        cx,
        cy,
        width,
        height,
    };
    match (model, params.len()) {
        ("SIMPLE_PINHOLE", 3) => Ok(make(params[0], params[0], params[1], params[2])),
        ("PINHOLE", 4) => Ok(make(params[0], params[1], params[2], params[3])),
        // Radial coefficient ignored; see module docs.
        ("SIMPLE_RADIAL", 4) => Ok(make(params[0], params[0], params[1], params[2])),
        _ => Err(IngestError::UnsupportedCameraModel {
            camera_id,
            model: model.to_string(),
        }),
    }
}

fn model_name(id: i32) -> &'static str {
    match id {
        0 => "SIMPLE_PINHOLE",
        1 => "PINHOLE",
        2 => "SIMPLE_RADIAL",
        3 => "RADIAL",
        4 => "OPENCV",
        5 => "OPENCV_FISHEYE",
        _ => "UNKNOWN",
    }
}

fn quat_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
    let q = crate::Quat::new(w, x, y, z);
    crate::scene::quat_to_frame(&q)
}

/// Rotation matrix to quaternion (w, x, y, z), Shepperd's method.
fn matrix_to_quat(r: &Mat3) -> [f64; 4] {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    }
}

fn camera_from(intr: &Intrinsics, rotation: Mat3, translation: Vec3) -> CameraView {
    CameraView {
        rotation,
        translation,
        fx: intr.fx,
        fy: intr.fy,
        cx: intr.cx,
        cy: intr.cy,
        width: intr.width,
        height: intr.height,
    }
}

fn malformed(what: &'static str, path: &Path, line: usize, detail: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        what,
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

fn parse_cameras_text(path: &Path) -> Result<HashMap<u32, Intrinsics>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cameras = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(malformed("camera record", path, lineno + 1, line));
        }
        let parse_err = |what| malformed("camera record", path, lineno + 1, what);
        let id: u32 = fields[0].parse().map_err(|_| parse_err("bad camera id"))?;
        let model = fields[1];
        let width: usize = fields[2].parse().map_err(|_| parse_err("bad width"))?;
        let height: usize = fields[3].parse().map_err(|_| parse_err("bad height"))?;
        let params: Vec<f64> = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err("bad parameter"))?;
        cameras.insert(id, model_intrinsics(id, model, width, height, &params)?);
    }
    Ok(cameras)
}

fn parse_images_text(
    path: &Path,
    cameras: &HashMap<u32, Intrinsics>,
) -> Result<Vec<ImageRecord>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut expect_points_line = false;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if expect_points_line {
            // 2D feature line (possibly empty); unused here.
            expect_points_line = false;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(malformed("image record", path, lineno + 1, trimmed));
        }
        let parse_err = |what| malformed("image record", path, lineno + 1, what);
        let vals: Vec<f64> = fields[1..8]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err("bad pose value"))?;
        let camera_id: u32 = fields[8].parse().map_err(|_| parse_err("bad camera id"))?;
        let name = fields[9].to_string();
        let intr = cameras
            .get(&camera_id)
            .ok_or(IngestError::UndeclaredCamera {
                image: name.clone(),
                camera_id,
            })?;
        let rotation = quat_to_matrix(vals[0], vals[1], vals[2], vals[3]);
        let translation = Vec3::new(vals[4], vals[5], vals[6]);
        records.push(ImageRecord {
            name,
            camera: camera_from(intr, rotation, translation),
        });
        expect_points_line = true;
    }
    Ok(records)
}

fn parse_points_text(path: &Path) -> Result<(Vec<Vec3>, Vec<[f64; 3]>), IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 7 {
            return Err(malformed("point record", path, lineno + 1, trimmed));
        }
        let parse_err = |what| malformed("point record", path, lineno + 1, what);
        let x: f64 = fields[1].parse().map_err(|_| parse_err("bad x"))?;
        let y: f64 = fields[2].parse().map_err(|_| parse_err("bad y"))?;
        let z: f64 = fields[3].parse().map_err(|_| parse_err("bad z"))?;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(parse_err("non-finite point"));
        }
        let r: f64 = fields[4].parse().map_err(|_| parse_err("bad r"))?;
        let g: f64 = fields[5].parse().map_err(|_| parse_err("bad g"))?;
        let b: f64 = fields[6].parse().map_err(|_| parse_err("bad b"))?;
        points.push(Vec3::new(x, y, z));
        colors.push([r / 255.0, g / 255.0, b / 255.0]);
    }
    Ok((points, colors))
}

fn read_null_terminated<R: Read>(r: &mut R) -> std::io::Result<String> {
    let mut bytes = Vec::new();
    loop {
        let b = r.read_u8()?;
        if b == 0 {
            break;
        }
        bytes.push(b);
    }
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn binary_io(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_cameras_binary(path: &Path) -> Result<HashMap<u32, Intrinsics>, IngestError> {
    let file = std::fs::File::open(path).map_err(binary_io(path))?;
    let mut r = BufReader::new(file);
    (|| -> Result<HashMap<u32, Intrinsics>, IngestError> {
        let n = r.read_u64::<LittleEndian>().map_err(binary_io(path))?;
        let mut cameras = HashMap::new();
        for _ in 0..n {
            let camera_id = r.read_i32::<LittleEndian>().map_err(binary_io(path))? as u32;
            let model_id = r.read_i32::<LittleEndian>().map_err(binary_io(path))?;
            let width = r.read_u64::<LittleEndian>().map_err(binary_io(path))? as usize;
            let height = r.read_u64::<LittleEndian>().map_err(binary_io(path))? as usize;
            let name = model_name(model_id);
            let n_params = match model_id {
                0 => 3,
                1 => 4,
                2 => 4,
                3 => 5,
                4 | 5 => 8,
                _ => {
                    return Err(IngestError::UnsupportedCameraModel {
                        camera_id,
                        model: format!("model id {model_id}"),
                    })
                }
            };
            let mut params = vec![0.0; n_params];
            for p in &mut params {
                *p = r.read_f64::<LittleEndian>().map_err(binary_io(path))?;
            }
            cameras.insert(
                camera_id,
                model_intrinsics(camera_id, name, width, height, &params)?,
            );
        }
        Ok(cameras)
    })()
}

fn parse_images_binary(
    path: &Path,
    cameras: &HashMap<u32, Intrinsics>,
) -> Result<Vec<ImageRecord>, IngestError> {
    let file = std::fs::File::open(path).map_err(binary_io(path))?;
    let mut r = BufReader::new(file);
    let err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let n = r.read_u64::<LittleEndian>().map_err(err)?;
    let mut records = Vec::new();
    for _ in 0..n {
        let _image_id = r.read_i32::<LittleEndian>().map_err(err)?;
        let mut pose = [0.0; 7];
        for v in &mut pose {
            *v = r.read_f64::<LittleEndian>().map_err(err)?;
        }
        let camera_id = r.read_i32::<LittleEndian>().map_err(err)? as u32;
        let name = read_null_terminated(&mut r).map_err(err)?;
        let n_points = r.read_u64::<LittleEndian>().map_err(err)?;
        // Skip the 2D features: x, y (f64) and point3D id (i64) each.
        let mut skip = vec![0u8; (n_points * 24) as usize];
        r.read_exact(&mut skip).map_err(err)?;
        let intr = cameras
            .get(&camera_id)
            .ok_or(IngestError::UndeclaredCamera {
                image: name.clone(),
                camera_id,
            })?;
        let rotation = quat_to_matrix(pose[0], pose[1], pose[2], pose[3]);
        let translation = Vec3::new(pose[4], pose[5], pose[6]);
        records.push(ImageRecord {
            name,
            camera: camera_from(intr, rotation, translation),
        });
    }
    Ok(records)
}

fn parse_points_binary(path: &Path) -> Result<(Vec<Vec3>, Vec<[f64; 3]>), IngestError> {
    let file = std::fs::File::open(path).map_err(binary_io(path))?;
    let mut r = BufReader::new(file);
    let err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let n = r.read_u64::<LittleEndian>().map_err(err)?;
    let mut points = Vec::with_capacity(n as usize);
    let mut colors = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let _id = r.read_u64::<LittleEndian>().map_err(err)?;
        let x = r.read_f64::<LittleEndian>().map_err(err)?;
        let y = r.read_f64::<LittleEndian>().map_err(err)?;
        let z = r.read_f64::<LittleEndian>().map_err(err)?;
        let rgb = [
            r.read_u8().map_err(err)? as f64 / 255.0,
            r.read_u8().map_err(err)? as f64 / 255.0,
            r.read_u8().map_err(err)? as f64 / 255.0,
        ];
        let _error = r.read_f64::<LittleEndian>().map_err(err)?;
        let track_len = r.read_u64::<LittleEndian>().map_err(err)?;
        let mut skip = vec![0u8; (track_len * 8) as usize];
        r.read_exact(&mut skip).map_err(err)?;
        points.push(Vec3::new(x, y, z));
        colors.push(rgb);
    }
    Ok((points, colors))
}

/// Parses a COLMAP sparse model directory (text or binary layout). Accepts
/// either the model directory itself or a dataset root containing
/// `sparse/0`.
pub fn parse_colmap(dir: &Path) -> Result<SparseModel, IngestError> {
    let model_dir = if dir.join("cameras.txt").is_file() || dir.join("cameras.bin").is_file() {
        PathBuf::from(dir)
    } else if dir.join("sparse/0/cameras.txt").is_file()
        || dir.join("sparse/0/cameras.bin").is_file()
    {
        dir.join("sparse/0")
    } else {
        return Err(IngestError::MissingFile(dir.join("cameras.{txt,bin}")));
    };
    let text = model_dir.join("cameras.txt").is_file();
    let (cameras, records, pts) = if text {
        let images_path = model_dir.join("images.txt");
        let points_path = model_dir.join("points3D.txt");
        for p in [&images_path, &points_path] {
            if !p.is_file() {
                return Err(IngestError::MissingFile(p.clone()));
            }
        }
        let cameras = parse_cameras_text(&model_dir.join("cameras.txt"))?;
        let records = parse_images_text(&images_path, &cameras)?;
        let pts = parse_points_text(&points_path)?;
        (cameras, records, pts)
    } else {
        let images_path = model_dir.join("images.bin");
        let points_path = model_dir.join("points3D.bin");
        for p in [&images_path, &points_path] {
            if !p.is_file() {
                return Err(IngestError::MissingFile(p.clone()));
            }
        }
        let cameras = parse_cameras_binary(&model_dir.join("cameras.bin"))?;
        let records = parse_images_binary(&images_path, &cameras)?;
        let pts = parse_points_binary(&points_path)?;
        (cameras, records, pts)
    };
    let _ = cameras;
    for record in &records {
        if !record.camera.pose_valid() {
            return Err(IngestError::Malformed {
                what: "image pose",
                path: model_dir,
                line: 0,
                detail: format!("{}: rotation block is not SE(3)", record.name),
            });
        }
    }
    Ok(SparseModel {
        records,
        points: pts.0,
        colors: pts.1,
    })
}

/// Writes a model in the COLMAP text layout (one camera record per image).
pub fn write_colmap_text(dir: &Path, model: &SparseModel) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let io = |path: PathBuf| move |source| IngestError::Io { path, source };

    let cam_path = dir.join("cameras.txt");
    let mut w = BufWriter::new(std::fs::File::create(&cam_path).map_err(io(cam_path.clone()))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "# Camera list with one line of data per camera:")?;
        writeln!(w, "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]")?;
        for (i, record) in model.records.iter().enumerate() {
            let c = &record.camera;
            writeln!(
                w,
                "{} PINHOLE {} {} {} {} {} {}",
                i + 1,
                c.width,
                c.height,
                c.fx,
                c.fy,
                c.cx,
                c.cy
            )?;
        }
        Ok(())
    })()
    .map_err(io(cam_path))?;

    let img_path = dir.join("images.txt");
    let mut w = BufWriter::new(std::fs::File::create(&img_path).map_err(io(img_path.clone()))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "# Image list with two lines of data per image:")?;
        writeln!(w, "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME")?;
        writeln!(w, "#   POINTS2D[] as (X, Y, POINT3D_ID)")?;
        for (i, record) in model.records.iter().enumerate() {
            let q = matrix_to_quat(&record.camera.rotation);
            let t = record.camera.translation;
            writeln!(
                w,
                "{} {} {} {} {} {} {} {} {} {}",
                i + 1,
                q[0],
                q[1],
                q[2],
                q[3],
                t.x,
                t.y,
                t.z,
                i + 1,
                record.name
            )?;
            writeln!(w)?;
        }
        Ok(())
    })()
    .map_err(io(img_path))?;

    let pts_path = dir.join("points3D.txt");
    let mut w = BufWriter::new(std::fs::File::create(&pts_path).map_err(io(pts_path.clone()))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "# 3D point list with one line of data per point:")?;
        writeln!(
            w,
            "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)"
        )?;
        for (i, (p, c)) in model.points.iter().zip(&model.colors).enumerate() {
            writeln!(
                w,
                "{} {} {} {} {} {} {} 0",
                i + 1,
                p.x,
                p.y,
                p.z,
                (c[0] * 255.0).round() as u8,
                (c[1] * 255.0).round() as u8,
                (c[2] * 255.0).round() as u8
            )?;
        }
        Ok(())
    })()
    .map_err(io(pts_path))?;
    Ok(())
}

/// Writes a model in the COLMAP binary layout.
pub fn write_colmap_binary(dir: &Path, model: &SparseModel) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let io = |path: PathBuf| move |source| IngestError::Io { path, source };

    let cam_path = dir.join("cameras.bin");
    let mut w = BufWriter::new(std::fs::File::create(&cam_path).map_err(io(cam_path.clone()))?);
    (|| -> std::io::Result<()> {
        w.write_u64::<LittleEndian>(model.records.len() as u64)?;
        for (i, record) in model.records.iter().enumerate() {
            let c = &record.camera;
            w.write_i32::<LittleEndian>(i as i32 + 1)?;
            w.write_i32::<LittleEndian>(1)?; // PINHOLE
            w.write_u64::<LittleEndian>(c.width as u64)?;
            w.write_u64::<LittleEndian>(c.height as u64)?;
            for v in [c.fx, c.fy, c.cx, c.cy] {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    })()
    .map_err(io(cam_path))?;

    let img_path = dir.join("images.bin");
    let mut w = BufWriter::new(std::fs::File::create(&img_path).map_err(io(img_path.clone()))?);
    (|| -> std::io::Result<()> {
        w.write_u64::<LittleEndian>(model.records.len() as u64)?;
        for (i, record) in model.records.iter().enumerate() {
            w.write_i32::<LittleEndian>(i as i32 + 1)?;
            let q = matrix_to_quat(&record.camera.rotation);
            let t = record.camera.translation;
            for v in [q[0], q[1], q[2], q[3], t.x, t.y, t.z] {
                w.write_f64::<LittleEndian>(v)?;
            }
            w.write_i32::<LittleEndian>(i as i32 + 1)?;
            w.write_all(record.name.as_bytes())?;
            w.write_u8(0)?;
            w.write_u64::<LittleEndian>(0)?; // no 2D features
        }
        Ok(())
    })()
    .map_err(io(img_path))?;

    let pts_path = dir.join("points3D.bin");
    let mut w = BufWriter::new(std::fs::File::create(&pts_path).map_err(io(pts_path.clone()))?);
    (|| -> std::io::Result<()> {
        w.write_u64::<LittleEndian>(model.points.len() as u64)?;
        for (i, (p, c)) in model.points.iter().zip(&model.colors).enumerate() {
            w.write_u64::<LittleEndian>(i as u64 + 1)?;
            for v in [p.x, p.y, p.z] {
                w.write_f64::<LittleEndian>(v)?;
            }
            for ch in 0..3 {
                w.write_u8((c[ch] * 255.0).round() as u8)?;
            }
            w.write_f64::<LittleEndian>(0.0)?;
            w.write_u64::<LittleEndian>(0)?; // empty track
        }
        Ok(())
    })()
    .map_err(io(pts_path))?;
    Ok(())
}

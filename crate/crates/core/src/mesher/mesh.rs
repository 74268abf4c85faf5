//! Triangle meshes: PLY/OBJ export, PLY import, surface sampling, Euler
//! characteristic, and mask-based culling.

use crate::error::MeshError;
use crate::grid::GridF;
use crate::raster::NEAR_PLANE;
use crate::scene::CameraView;
use crate::Vec3;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl TriangleMesh {
    pub fn is_valid(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.triangles.iter().all(|t| t.iter().all(|&i| i < n))
            && self
                .vertices
                .iter()
                .all(|v| v.iter().all(|c| c.is_finite()))
            && self
                .colors
                .as_ref()
                .map_or(true, |c| c.len() == self.vertices.len())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MeshError + '_ {
    move |source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Binary little-endian PLY with double vertices, optional uchar colors,
/// and uchar-counted int triangle lists.
pub fn save_mesh_ply(path: &Path, mesh: &TriangleMesh) -> Result<(), MeshError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let with_colors = mesh.colors.is_some();
    (|| -> std::io::Result<()> {
        write!(w, "ply\nformat binary_little_endian 1.0\n")?;
        write!(w, "element vertex {}\n", mesh.vertices.len())?;
        write!(w, "property double x\nproperty double y\nproperty double z\n")?;
        if with_colors {
            write!(
                w,
                "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            )?;
        }
        write!(w, "element face {}\n", mesh.triangles.len())?;
        write!(w, "property list uchar int vertex_indices\n")?;
        write!(w, "end_header\n")?;
        for (i, v) in mesh.vertices.iter().enumerate() {
            for c in v.iter() {
                w.write_f64::<LittleEndian>(*c)?;
            }
            if let Some(colors) = &mesh.colors {
                w.write_all(&colors[i])?;
            }
        }
        for t in &mesh.triangles {
            w.write_u8(3)?;
            for &i in t {
                w.write_i32::<LittleEndian>(i as i32)?;
            }
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn load_mesh_ply(path: &Path) -> Result<TriangleMesh, MeshError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    loop {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)
            .map_err(|_| MeshError::Format("truncated header".into()))?;
        header.push(b[0]);
        if header.ends_with(b"end_header\n") {
            break;
        }
        if header.len() > 1 << 16 {
            return Err(MeshError::Format("header too long".into()));
        }
    }
    let header = String::from_utf8_lossy(&header);
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(MeshError::Format("missing ply magic".into()));
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut vertex_props: Vec<(String, String)> = Vec::new();
    let mut in_vertex = false;
    for line in header.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", f, "1.0"] if *f == "binary_little_endian" => {}
            ["format", ..] => {
                return Err(MeshError::Format("expected binary little-endian".into()))
            }
            ["element", "vertex", n] => {
                n_vertices = n
                    .parse()
                    .map_err(|_| MeshError::Format("bad vertex count".into()))?;
                in_vertex = true;
            }
            ["element", "face", n] => {
                n_faces = n
                    .parse()
                    .map_err(|_| MeshError::Format("bad face count".into()))?;
                in_vertex = false;
            }
            ["property", ty, name] if in_vertex => {
                vertex_props.push((ty.to_string(), name.to_string()));
            }
            _ => {}
        }
    }
    let mut vertices = Vec::with_capacity(n_vertices);
    let mut colors = Vec::new();
    let has_colors = vertex_props.iter().any(|(_, n)| n == "red");
    for _ in 0..n_vertices {
        let mut pos = Vec3::zeros();
        let mut rgb = [0u8; 3];
        for (ty, name) in &vertex_props {
            let value = match ty.as_str() {
                "double" | "float64" => r
                    .read_f64::<LittleEndian>()
                    .map_err(|_| MeshError::Format("truncated vertex data".into()))?,
                "float" | "float32" => r
                    .read_f32::<LittleEndian>()
                    .map_err(|_| MeshError::Format("truncated vertex data".into()))?
                    as f64,
                "uchar" | "uint8" => r
                    .read_u8()
                    .map_err(|_| MeshError::Format("truncated vertex data".into()))?
                    as f64,
                other => {
                    return Err(MeshError::Format(format!(
                        "unsupported vertex property type {other}"
                    )))
                }
            };
            match name.as_str() {
                "x" => pos.x = value,
                "y" => pos.y = value,
                "z" => pos.z = value,
                "red" => rgb[0] = value as u8,
                "green" => rgb[1] = value as u8,
                "blue" => rgb[2] = value as u8,
                _ => {}
            }
        }
        vertices.push(pos);
        if has_colors {
            colors.push(rgb);
        }
    }
    let mut triangles = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let count = r
            .read_u8()
            .map_err(|_| MeshError::Format("truncated face data".into()))?;
        if count != 3 {
            return Err(MeshError::Format(format!(
                "only triangles supported, found {count}-gon"
            )));
        }
        let mut t = [0u32; 3];
        for v in &mut t {
            *v = r
                .read_i32::<LittleEndian>()
                .map_err(|_| MeshError::Format("truncated face data".into()))?
                as u32;
        }
        triangles.push(t);
    }
    let mesh = TriangleMesh {
        vertices,
        triangles,
        colors: has_colors.then_some(colors),
    };
    if !mesh.is_valid() {
        return Err(MeshError::Format("triangle index out of range".into()));
    }
    Ok(mesh)
}

/// Geometry-only OBJ export.
pub fn save_mesh_obj(path: &Path, mesh: &TriangleMesh) -> Result<(), MeshError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        for v in &mesh.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// V - E + F with E counted over distinct undirected triangle edges.
pub fn euler_characteristic(mesh: &TriangleMesh) -> i64 {
    let mut used: HashSet<u32> = HashSet::new();
    let mut edges: HashSet<(u32, u32)> = HashSet::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            used.insert(t[k]);
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    used.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64
}

/// Uniform area-weighted surface samples.
pub fn sample_mesh_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Vec<Vec3> {
    if mesh.triangles.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        let (a, b, c) = (
            mesh.vertices[t[0] as usize],
            mesh.vertices[t[1] as usize],
            mesh.vertices[t[2] as usize],
        );
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if total == 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = || ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    (0..count)
        .map(|_| {
            let pick = uniform() * total;
            let idx = cumulative.partition_point(|&c| c < pick);
            let t = mesh.triangles[idx.min(mesh.triangles.len() - 1)];
            let (a, b, c) = (
                mesh.vertices[t[0] as usize],
                mesh.vertices[t[1] as usize],
                mesh.vertices[t[2] as usize],
            );
            let (mut u, mut v) = (uniform(), uniform());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + u * (b - a) + v * (c - a)
        })
        .collect()
}

/// Removes every triangle whose centroid projection falls outside the mask
/// in all views where it is visible; triangles seen by no view are removed
/// as unobserved. Used when evaluating non-object-centric baselines.
pub fn cull_mesh_by_masks(
    mesh: &TriangleMesh,
    cameras: &[CameraView],
    masks: &[GridF],
) -> TriangleMesh {
    assert_eq!(cameras.len(), masks.len(), "one mask per view");
    let keep: Vec<bool> = mesh
        .triangles
        .iter()
        .map(|t| {
            let centroid = (mesh.vertices[t[0] as usize]
                + mesh.vertices[t[1] as usize]
                + mesh.vertices[t[2] as usize])
                / 3.0;
            cameras.iter().zip(masks).any(|(camera, mask)| {
                let pc = camera.to_camera(&centroid);
                if pc.z < NEAR_PLANE {
                    return false;
                }
                let p = camera.project_cam(&pc);
                let (x, y) = (p[0].floor(), p[1].floor());
                if x < 0.0 || y < 0.0 || x >= camera.width as f64 || y >= camera.height as f64 {
                    return false;
                }
                *mask.get(x as usize, y as usize) >= 0.5
            })
        })
        .collect();

    // Compact to referenced vertices.
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut out = TriangleMesh {
        colors: mesh.colors.as_ref().map(|_| Vec::new()),
        ..Default::default()
    };
    for (t, &k) in mesh.triangles.iter().zip(&keep) {
        if !k {
            continue;
        }
        let mut tri = [0u32; 3];
        for (slot, &v) in t.iter().enumerate() {
            if remap[v as usize] == u32::MAX {
                remap[v as usize] = out.vertices.len() as u32;
                out.vertices.push(mesh.vertices[v as usize]);
                if let (Some(dst), Some(src)) = (&mut out.colors, &mesh.colors) {
                    dst.push(src[v as usize]);
                }
            }
            tri[slot] = remap[v as usize];
        }
        out.triangles.push(tri);
    }
    out
}

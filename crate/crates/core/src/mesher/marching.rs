//! Marching cubes over the fused volume.
//!
//! The 256-case triangle lookup table is constructed once at startup instead
//! of being transcribed: for every corner-sign configuration the crossed
//! edges are paired face by face (ambiguous faces resolve by separating the
//! inside corners, a rule that depends only on face corner states and is
//! therefore consistent between neighboring cells), the resulting cycles are
//! oriented toward positive values, and fan-triangulated.

use super::mesh::TriangleMesh;
use super::TsdfVolume;
use crate::Vec3;
use once_cell::sync::Lazy;
use std::collections::HashMap;

/// Corner `i` sits at offset ((i & 1), (i >> 1) & 1, (i >> 2) & 1).
const CORNER_OFFSET: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// The 12 cube edges as corner pairs; the first corner carries the smaller
/// offset along the edge axis.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Cube faces as cyclic corner quads (consecutive pairs are cube edges).
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 3, 7, 6], // y = 1
    [0, 1, 3, 2], // z = 0
    [4, 5, 7, 6], // z = 1
];

fn edge_index(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES
        .iter()
        .position(|&e| e == key)
        .expect("face edge is a cube edge")
}

fn corner_pos(i: usize) -> Vec3 {
    Vec3::new(
        CORNER_OFFSET[i][0] as f64,
        CORNER_OFFSET[i][1] as f64,
        CORNER_OFFSET[i][2] as f64,
    )
}

/// Builds the triangle list (as edge-index triples) for one configuration.
fn triangulate_config(config: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| (config >> c) & 1 == 1;
    let crossed: Vec<usize> = (0..12)
        .filter(|&e| inside(EDGES[e].0) != inside(EDGES[e].1))
        .collect();
    if crossed.is_empty() {
        return Vec::new();
    }

    // Pair crossings face by face.
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); 12];
    let mut connect = |a: usize, b: usize| {
        links[a].push(b);
        links[b].push(a);
    };
    for face in FACES {
        let cyc_edges: [usize; 4] = std::array::from_fn(|k| {
            edge_index(face[k], face[(k + 1) % 4])
        });
        let crossed_face: Vec<usize> = (0..4)
            .filter(|&k| {
                inside(face[k]) != inside(face[(k + 1) % 4])
            })
            .collect();
        match crossed_face.len() {
            0 => {}
            2 => connect(cyc_edges[crossed_face[0]], cyc_edges[crossed_face[1]]),
            4 => {
                // Alternating face: separate the inside corners.
                for k in 0..4 {
                    if inside(face[k]) {
                        connect(cyc_edges[(k + 3) % 4], cyc_edges[k]);
                    }
                }
            }
            n => unreachable!("face with {n} crossings"),
        }
    }
    for &e in &crossed {
        debug_assert_eq!(links[e].len(), 2, "config {config} edge {e}");
    }

    // Walk the connection graph into cycles.
    let mut visited = [false; 12];
    let mut triangles = Vec::new();
    for &start in &crossed {
        if visited[start] {
            continue;
        }
        let mut cycle = vec![start];
        visited[start] = true;
        let mut prev = start;
        let mut current = links[start][0];
        while current != start {
            visited[current] = true;
            cycle.push(current);
            let next = if links[current][0] == prev {
                links[current][1]
            } else {
                links[current][0]
            };
            prev = current;
            current = next;
        }
        debug_assert!(cycle.len() >= 3);

        // Orient toward the outside (positive side).
        let mids: Vec<Vec3> = cycle
            .iter()
            .map(|&e| 0.5 * (corner_pos(EDGES[e].0) + corner_pos(EDGES[e].1)))
            .collect();
        let mut normal = Vec3::zeros();
        for i in 0..mids.len() {
            normal += mids[i].cross(&mids[(i + 1) % mids.len()]);
        }
        let mut inside_mean = Vec3::zeros();
        let mut outside_mean = Vec3::zeros();
        for &e in &cycle {
            let (a, b) = EDGES[e];
            let (i, o) = if inside(a) { (a, b) } else { (b, a) };
            inside_mean += corner_pos(i);
            outside_mean += corner_pos(o);
        }
        let direction = (outside_mean - inside_mean) / cycle.len() as f64;
        let dot = normal.dot(&direction);
        assert!(
            dot.abs() > 1e-9,
            "degenerate cycle orientation in config {config}"
        );
        if dot < 0.0 {
            cycle.reverse();
        }

        for i in 1..cycle.len() - 1 {
            triangles.push([cycle[0] as u8, cycle[i] as u8, cycle[i + 1] as u8]);
        }
    }
    triangles
}

static TRIANGLE_TABLE: Lazy<Vec<Vec<[u8; 3]>>> =
    Lazy::new(|| (0..256).map(triangulate_config).collect());

/// Canonical lattice key of a cell edge: lattice coords of the low corner
/// plus the edge axis; shared between adjacent cells.
fn edge_key(cell: [usize; 3], edge: usize) -> ([usize; 3], u8) {
    let (a, b) = EDGES[edge];
    let base = [
        cell[0] + CORNER_OFFSET[a][0],
        cell[1] + CORNER_OFFSET[a][1],
        cell[2] + CORNER_OFFSET[a][2],
    ];
    let axis = (0..3)
        .find(|&k| CORNER_OFFSET[a][k] != CORNER_OFFSET[b][k])
        .unwrap() as u8;
    (base, axis)
}

/// Extracts the zero isosurface with linear interpolation and per-vertex
/// colors from the fused color grid. Cells touching any zero-weight voxel
/// are treated as unobserved and produce no surface.
pub fn marching_cubes(volume: &TsdfVolume) -> TriangleMesh {
    let [nx, ny, nz] = volume.dims;
    let mut mesh = TriangleMesh::default();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let mut vertex_of: HashMap<([usize; 3], u8), u32> = HashMap::new();

    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let idx: [usize; 3] = [x, y, z];
                let corner_index = |c: usize| {
                    volume.index(
                        x + CORNER_OFFSET[c][0],
                        y + CORNER_OFFSET[c][1],
                        z + CORNER_OFFSET[c][2],
                    )
                };
                if (0..8).any(|c| volume.weight(corner_index(c)) == 0.0) {
                    continue;
                }
                let values: [f64; 8] = std::array::from_fn(|c| volume.tsdf(corner_index(c)));
                let mut config = 0usize;
                for (c, &v) in values.iter().enumerate() {
                    if v < 0.0 {
                        config |= 1 << c;
                    }
                }
                let triangles = &TRIANGLE_TABLE[config];
                if triangles.is_empty() {
                    continue;
                }
                for tri in triangles {
                    let mut ids = [0u32; 3];
                    for (slot, &edge) in tri.iter().enumerate() {
                        let key = edge_key(idx, edge as usize);
                        let id = *vertex_of.entry(key).or_insert_with(|| {
                            let (a, b) = EDGES[edge as usize];
                            let (da, db) = (values[a], values[b]);
                            let t = da / (da - db);
                            let pa = volume.lattice_point(
                                x + CORNER_OFFSET[a][0],
                                y + CORNER_OFFSET[a][1],
                                z + CORNER_OFFSET[a][2],
                            );
                            let pb = volume.lattice_point(
                                x + CORNER_OFFSET[b][0],
                                y + CORNER_OFFSET[b][1],
                                z + CORNER_OFFSET[b][2],
                            );
                            let ca = volume.color(corner_index(a));
                            let cb = volume.color(corner_index(b));
                            let color = [
                                (((1.0 - t) * ca[0] + t * cb[0]).clamp(0.0, 1.0) * 255.0)
                                    .round() as u8,
                                (((1.0 - t) * ca[1] + t * cb[1]).clamp(0.0, 1.0) * 255.0)
                                    .round() as u8,
                                (((1.0 - t) * ca[2] + t * cb[2]).clamp(0.0, 1.0) * 255.0)
                                    .round() as u8,
                            ];
                            mesh.vertices.push(pa + t * (pb - pa));
                            colors.push(color);
                            (mesh.vertices.len() - 1) as u32
                        });
                        ids[slot] = id;
                    }
                    if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                        mesh.triangles.push(ids);
                    }
                }
            }
        }
    }
    mesh.colors = Some(colors);
    mesh
}

//! Splat model files: binary little-endian point-cloud PLY, one vertex per
//! splat, following the community splat-PLY property layout
//! (x/y/z, nx/ny/nz, f_dc_*, f_rest_*, opacity, scale_*, rot_*).
//!
//! Properties are written as doubles so save/load round-trips the model
//! bit-exactly; the loader also accepts float32 files from other tools.

use crate::error::IngestError;
use crate::scene::{SplatSet, SH_COEFF_COUNT};
use crate::{Quat, Vec3};
use byteorder::{LittleEndian, WriteBytesExt};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const SH_REST: usize = (SH_COEFF_COUNT - 1) * 3;

fn property_names() -> Vec<String> {
    let mut names = vec!["x", "y", "z", "nx", "ny", "nz"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for i in 0..3 {
        names.push(format!("f_dc_{i}"));
    }
    for i in 0..SH_REST {
        names.push(format!("f_rest_{i}"));
    }
    names.push("opacity".into());
    names.push("scale_0".into());
    names.push("scale_1".into());
    for i in 0..4 {
        names.push(format!("rot_{i}"));
    }
    names
}

fn format_err(offset: u64, detail: impl Into<String>) -> IngestError {
    IngestError::SplatFormat {
        offset,
        detail: detail.into(),
    }
}

/// Writes the splat set; `load_splats(save_splats(s))` is bit-exact.
pub fn save_splats(path: &Path, splats: &SplatSet) -> Result<(), IngestError> {
    let file = std::fs::File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        write!(w, "ply\nformat binary_little_endian 1.0\n")?;
        write!(w, "element vertex {}\n", splats.len())?;
        for name in property_names() {
            write!(w, "property double {name}\n")?;
        }
        write!(w, "end_header\n")?;
        for i in 0..splats.len() {
            for v in splats.position[i].iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
            // Normal slots kept zero per the community layout.
            for _ in 0..3 {
                w.write_f64::<LittleEndian>(0.0)?;
            }
            for c in 0..3 {
                w.write_f64::<LittleEndian>(splats.sh[i][0][c])?;
            }
            // Channel-major rest coefficients.
            for c in 0..3 {
                for k in 1..SH_COEFF_COUNT {
                    w.write_f64::<LittleEndian>(splats.sh[i][k][c])?;
                }
            }
            w.write_f64::<LittleEndian>(splats.opacity_logit[i])?;
            w.write_f64::<LittleEndian>(splats.log_scale[i][0])?;
            w.write_f64::<LittleEndian>(splats.log_scale[i][1])?;
            for v in splats.rotation[i].iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.flush()
    })()
    .map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum PropType {
    F32,
    F64,
}

impl PropType {
    fn size(self) -> usize {
        match self {
            PropType::F32 => 4,
            PropType::F64 => 8,
        }
    }
}

pub fn load_splats(path: &Path) -> Result<SplatSet, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = BufReader::new(file);
    let mut offset = 0u64;

    fn read_header_line(
        r: &mut BufReader<std::fs::File>,
        offset: &mut u64,
    ) -> Result<String, IngestError> {
        let mut line = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            r.read_exact(&mut byte)
                .map_err(|_| format_err(*offset, "unexpected end of header"))?;
            *offset += 1;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
            if line.len() > 4096 {
                return Err(format_err(*offset, "header line too long"));
            }
        }
        Ok(String::from_utf8_lossy(&line).trim().to_string())
    }

    if read_header_line(&mut r, &mut offset)? != "ply" {
        return Err(format_err(0, "missing `ply` magic"));
    }
    if read_header_line(&mut r, &mut offset)? != "format binary_little_endian 1.0" {
        return Err(format_err(offset, "expected binary little-endian 1.0"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, PropType)> = Vec::new();
    loop {
        let line = read_header_line(&mut r, &mut offset)?;
        if line == "end_header" {
            break;
        }
        if line.starts_with("comment") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("element ") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() == 2 && fields[0] == "vertex" {
                count = Some(
                    fields[1]
                        .parse()
                        .map_err(|_| format_err(offset, "bad vertex count"))?,
                );
            } else {
                return Err(format_err(offset, format!("unsupported element `{rest}`")));
            }
        } else if let Some(rest) = line.strip_prefix("property ") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(format_err(offset, format!("bad property `{rest}`")));
            }
            let ty = match fields[0] {
                "float" | "float32" => PropType::F32,
                "double" | "float64" => PropType::F64,
                other => {
                    return Err(format_err(
                        offset,
                        format!("unsupported property type `{other}`"),
                    ))
                }
            };
            props.push((fields[1].to_string(), ty));
        }
    }
    let count = count.ok_or_else(|| format_err(offset, "missing vertex element"))?;

    let index: HashMap<&str, usize> = props
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.as_str(), i))
        .collect();
    for required in property_names() {
        // Normals are optional on load.
        if required.starts_with('n') {
            continue;
        }
        if !index.contains_key(required.as_str()) {
            return Err(format_err(
                offset,
                format!("missing property `{required}`"),
            ));
        }
    }

    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let mut field_offsets = Vec::with_capacity(props.len());
    let mut acc = 0;
    for (_, t) in &props {
        field_offsets.push(acc);
        acc += t.size();
    }
    let read_field = |row: &[u8], slot: usize| -> f64 {
        let at = field_offsets[slot];
        match props[slot].1 {
            PropType::F32 => f32::from_le_bytes(row[at..at + 4].try_into().unwrap()) as f64,
            PropType::F64 => f64::from_le_bytes(row[at..at + 8].try_into().unwrap()),
        }
    };

    let mut splats = SplatSet::with_len(0);
    let mut row = vec![0u8; stride];
    for i in 0..count {
        r.read_exact(&mut row).map_err(|_| {
            format_err(
                offset + (i * stride) as u64,
                format!("payload truncated at vertex {i}"),
            )
        })?;
        let g = |name: &str| read_field(&row, index[name]);
        let position = Vec3::new(g("x"), g("y"), g("z"));
        let mut sh = [[0.0; 3]; SH_COEFF_COUNT];
        for c in 0..3 {
            sh[0][c] = g(&format!("f_dc_{c}"));
        }
        for c in 0..3 {
            for k in 1..SH_COEFF_COUNT {
                sh[k][c] = g(&format!("f_rest_{}", c * (SH_COEFF_COUNT - 1) + (k - 1)));
            }
        }
        let opacity = g("opacity");
        let log_scale = [g("scale_0"), g("scale_1")];
        let rotation = Quat::new(g("rot_0"), g("rot_1"), g("rot_2"), g("rot_3"));
        splats.push(position, rotation, log_scale, opacity, sh);
    }
    Ok(splats)
}

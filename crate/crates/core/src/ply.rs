//! Binary little-endian PLY export/import of Gaussian clouds.
//!
//! Per-vertex layout: positions, raw quaternion, raw scales and opacity as
//! doubles; activated color quantized to uchar red/green/blue for viewers;
//! raw color logits as double f_red/f_green/f_blue so import reproduces the
//! cloud losslessly.

use crate::autodiff::sigmoid;
use crate::cloud::{GaussianCloud, SpaceTag};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary little-endian ply file")]
    BadMagic,
    #[error("unsupported ply layout: {0}")]
    Unsupported(String),
    #[error("vertex data truncated")]
    Truncated,
}

const DOUBLE_PROPS: [&str; 11] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity",
];

pub fn ply_header(n: usize) -> String {
    let mut h = String::new();
    h.push_str("ply\nformat binary_little_endian 1.0\n");
    h.push_str("comment gaussian point cloud\n");
    h.push_str(&format!("element vertex {n}\n"));
    for p in DOUBLE_PROPS {
        h.push_str(&format!("property double {p}\n"));
    }
    for c in ["red", "green", "blue"] {
        h.push_str(&format!("property uchar {c}\n"));
    }
    for c in ["f_red", "f_green", "f_blue"] {
        h.push_str(&format!("property double {c}\n"));
    }
    h.push_str("end_header\n");
    h
}

pub fn export_ply(cloud: &GaussianCloud, path: &Path) -> Result<(), PlyError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(ply_header(cloud.len()).as_bytes())?;
    for i in 0..cloud.len() {
        for v in cloud.mean(i) {
            w.write_f64::<LittleEndian>(v)?;
        }
        for v in cloud.rotation(i) {
            w.write_f64::<LittleEndian>(v)?;
        }
        for v in cloud.scale(i) {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(cloud.opacities[i])?;
        for v in cloud.color(i) {
            let byte = (sigmoid(v).clamp(0.0, 1.0) * 255.0).round() as u8;
            w.write_all(&[byte])?;
        }
        for v in cloud.color(i) {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PropKind {
    Double,
    Float,
    Uchar,
}

impl PropKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "double" | "float64" => Some(PropKind::Double),
            "float" | "float32" => Some(PropKind::Float),
            "uchar" | "uint8" => Some(PropKind::Uchar),
            _ => None,
        }
    }
}

/// Reads a cloud written by `export_ply`; tolerates extra properties and
/// float32 files, keyed by property names.
pub fn import_ply(path: &Path, space_tag: SpaceTag) -> Result<GaussianCloud, PlyError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(PlyError::BadMagic);
    }
    line.clear();
    r.read_line(&mut line)?;
    if line.trim() != "format binary_little_endian 1.0" {
        return Err(PlyError::BadMagic);
    }
    let mut n_vertex = 0usize;
    let mut props: Vec<(PropKind, String)> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(PlyError::Truncated);
        }
        let t = line.trim();
        if t == "end_header" {
            break;
        }
        if t.starts_with("comment") {
            continue;
        }
        if let Some(rest) = t.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            let name = it.next().unwrap_or("");
            let count: usize = it.next().and_then(|v| v.parse().ok()).unwrap_or(0);
            if name == "vertex" {
                n_vertex = count;
            } else if count > 0 {
                return Err(PlyError::Unsupported(format!("element {name}")));
            }
            continue;
        }
        if let Some(rest) = t.strip_prefix("property ") {
            let mut it = rest.split_whitespace();
            let kind = it.next().and_then(PropKind::parse).ok_or_else(|| {
                PlyError::Unsupported(format!("property type in {t:?}"))
            })?;
            let name = it.next().ok_or_else(|| PlyError::Unsupported(t.to_string()))?;
            props.push((kind, name.to_string()));
        }
    }
    let field = |name: &str| props.iter().position(|(_, p)| p == name);
    let need = |name: &str| field(name).ok_or_else(|| PlyError::Unsupported(format!("missing {name}")));
    let idx_xyz = [need("x")?, need("y")?, need("z")?];
    let idx_rot = [need("rot_0")?, need("rot_1")?, need("rot_2")?, need("rot_3")?];
    let idx_scale = [need("scale_0")?, need("scale_1")?, need("scale_2")?];
    let idx_op = need("opacity")?;
    // Prefer lossless float color; fall back to dequantized uchar.
    let idx_fcol = [field("f_red"), field("f_green"), field("f_blue")];
    let idx_ucol = [field("red"), field("green"), field("blue")];

    let mut cloud = GaussianCloud::with_capacity(n_vertex, space_tag);
    let mut row = vec![0.0f64; props.len()];
    for _ in 0..n_vertex {
        for (slot, (kind, _)) in row.iter_mut().zip(props.iter()) {
            *slot = match kind {
                PropKind::Double => r.read_f64::<LittleEndian>().map_err(|_| PlyError::Truncated)?,
                PropKind::Float => {
                    r.read_f32::<LittleEndian>().map_err(|_| PlyError::Truncated)? as f64
                }
                PropKind::Uchar => {
                    let mut b = [0u8; 1];
                    r.read_exact(&mut b).map_err(|_| PlyError::Truncated)?;
                    b[0] as f64
                }
            };
        }
        let color = if idx_fcol.iter().all(|i| i.is_some()) {
            [
                row[idx_fcol[0].unwrap()],
                row[idx_fcol[1].unwrap()],
                row[idx_fcol[2].unwrap()],
            ]
        } else if idx_ucol.iter().all(|i| i.is_some()) {
            // logit of dequantized color, clamped away from the poles.
            let logit = |b: f64| {
                let v = (b / 255.0).clamp(1e-4, 1.0 - 1e-4);
                (v / (1.0 - v)).ln()
            };
            [
                logit(row[idx_ucol[0].unwrap()]),
                logit(row[idx_ucol[1].unwrap()]),
                logit(row[idx_ucol[2].unwrap()]),
            ]
        } else {
            return Err(PlyError::Unsupported("missing color properties".into()));
        };
        cloud.push(
            [row[idx_xyz[0]], row[idx_xyz[1]], row[idx_xyz[2]]],
            [row[idx_rot[0]], row[idx_rot[1]], row[idx_rot[2]], row[idx_rot[3]]],
            [row[idx_scale[0]], row[idx_scale[1]], row[idx_scale[2]]],
            row[idx_op],
            color,
        );
    }
    Ok(cloud)
}

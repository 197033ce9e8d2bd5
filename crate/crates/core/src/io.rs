//! Point cloud and pose file formats.
//!
//! Supported clouds are the KITTI velodyne layout (packed little-endian
//! `f32 x, y, z, intensity` records) and ASCII PLY. Poses use the KITTI
//! convention of one row-major 3×4 matrix per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform, RotationMode};

const KITTI_RECORD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    KittiBin,
    PlyAscii,
}

impl CloudFormat {
    /// Guesses the format from the file extension (`.bin` or `.ply`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "bin" => Some(Self::KittiBin),
            "ply" => Some(Self::PlyAscii),
            _ => None,
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let cloud = match format {
        CloudFormat::KittiBin => parse_kitti_bin(&bytes)?,
        CloudFormat::PlyAscii => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::parse(Location::Byte(e.valid_up_to() as u64), "invalid UTF-8"))?;
            parse_ply_ascii(text)?
        }
    };
    let frame = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    Ok(cloud.with_frame(frame))
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        CloudFormat::KittiBin => to_kitti_bin(cloud),
        CloudFormat::PlyAscii => to_ply_ascii(cloud).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_kitti_bin(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !bytes.len().is_multiple_of(KITTI_RECORD) {
        let offset = bytes.len() - bytes.len() % KITTI_RECORD;
        return Err(Error::parse(
            Location::Byte(offset as u64),
            format!("truncated record ({} trailing bytes)", bytes.len() - offset),
        ));
    }
    let points = bytes
        .chunks_exact(KITTI_RECORD)
        .map(|rec| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            Point3::new(f(0), f(1), f(2))
        })
        .collect();
    PointCloud::new(points)
}

/// Points written as `f32` with zero intensity.
pub fn to_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD);
    for p in cloud.points() {
        for c in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub fn parse_ply_ascii(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let bad = |line: usize, msg: &str| Error::parse(Location::Line(line), msg);

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        Some((n, _)) => return Err(bad(n, "missing 'ply' magic")),
        None => return Err(Error::EmptyCloud),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_end = None;
    for (n, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(bad(n, "only ascii PLY is supported"));
                }
                saw_format = true;
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| bad(n, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad(n, "element without a valid count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(n, "property before any element"))?;
                let name = tok.last().ok_or_else(|| bad(n, "property without a name"))?;
                el.properties.push(name.to_string());
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("end_header") => {
                header_end = Some(n);
                break;
            }
            Some(other) => return Err(bad(n, &format!("unknown header keyword '{other}'"))),
        }
    }
    let header_end = header_end.ok_or_else(|| bad(text.lines().count(), "missing end_header"))?;
    if !saw_format {
        return Err(bad(header_end, "missing format line"));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad(header_end, "no vertex element"))?;
    let column = |axis: &str| {
        elements[vertex]
            .properties
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| bad(header_end, &format!("vertex element lacks property '{axis}'")))
    };
    let (cx, cy, cz) = (column("x")?, column("y")?, column("z")?);

    // skip rows of elements stored before the vertices
    let skip: usize = elements[..vertex].iter().map(|e| e.count).sum();
    let mut last_line = header_end;
    for _ in 0..skip {
        last_line = lines.next().ok_or_else(|| bad(last_line, "unexpected end of data"))?.0;
    }
    let n_vertex = elements[vertex].count;
    if n_vertex == 0 {
        return Err(Error::EmptyCloud);
    }
    let width = elements[vertex].properties.len();
    let mut points = Vec::with_capacity(n_vertex);
    for _ in 0..n_vertex {
        let (n, line) = lines
            .next()
            .ok_or_else(|| bad(last_line + 1, "unexpected end of vertex data"))?;
        last_line = n;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() < width {
            return Err(bad(n, &format!("expected {width} values, found {}", vals.len())));
        }
        let get = |c: usize| {
            vals[c]
                .parse::<f64>()
                .map_err(|_| bad(n, &format!("invalid number '{}'", vals[c])))
        };
        points.push(Point3::new(get(cx)?, get(cy)?, get(cz)?));
    }
    PointCloud::new(points)
}

/// Shortest round-trip decimal representation, so `f64` values survive a
/// write/read cycle exactly.
pub fn to_ply_ascii(cloud: &PointCloud) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

/// One pose per line: 12 values of the row-major 3×4 matrix `[R | t]`.
pub fn parse_poses(text: &str) -> Result<Vec<RigidTransform>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(Location::Line(i + 1), e.to_string()))?;
        if vals.len() != 12 {
            return Err(Error::parse(
                Location::Line(i + 1),
                format!("expected 12 values, found {}", vals.len()),
            ));
        }
        let rotation = Matrix3::new(
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        );
        let translation = Vector3::new(vals[3], vals[7], vals[11]);
        poses.push(RigidTransform::new(rotation, translation, RotationMode::FullSo3));
    }
    Ok(poses)
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text)
}

pub fn format_pose(pose: &RigidTransform) -> String {
    let m = pose.to_rows();
    m[..3]
        .iter()
        .flat_map(|row| row.iter())
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// World poses of a source and a target scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePair {
    pub t_src: RigidTransform,
    pub t_tgt: RigidTransform,
}

impl PosePair {
    /// `T_tgt⁻¹ · T_src`: maps source-scan coordinates into the target
    /// scan, the quantity a registration estimates.
    pub fn relative(&self) -> RigidTransform {
        self.t_tgt.inverse().compose(&self.t_src)
    }
}

//! Scan and trajectory files.
//!
//! Scans: KITTI-style `bin-xyzi` (little-endian f32 quadruples), PLY (ascii or
//! binary little-endian) and ASCII PCD. Trajectories: KITTI (row-major 3x4 per
//! line) and TUM (`t tx ty tz qx qy qz qw`). Every parser works on in-memory
//! bytes so it can be driven directly by the fuzz targets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::FrameIoError;
use crate::geometry::Pose;

/// One scan or keyframe: points in its own local frame plus a global pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    /// Pyramid layer, starting at 1 for the input scans.
    pub layer: usize,
    pub points: Vec<Vector3<f64>>,
    pub pose: Pose,
}

impl Frame {
    pub fn new(index: usize, points: Vec<Vector3<f64>>, pose: Pose) -> Self {
        Self {
            index,
            layer: 1,
            points,
            pose,
        }
    }

    pub fn global_points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.points.iter().map(|p| self.pose.transform_point(p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    /// Per-pose timestamps; defaults to the pose index when the source has none.
    pub stamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        let stamps = (0..poses.len()).map(|i| i as f64).collect();
        Self { poses, stamps }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanFormat {
    BinXyzi,
    /// ASCII or binary little-endian PLY; the header decides.
    Ply,
    PcdAscii,
}

impl ScanFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "bin" => Some(Self::BinXyzi),
            "ply" => Some(Self::Ply),
            "pcd" => Some(Self::PcdAscii),
            _ => None,
        }
    }
}

impl FromStr for ScanFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bin-xyzi" | "bin" => Ok(Self::BinXyzi),
            "ply-ascii" | "ply" => Ok(Self::Ply),
            "pcd-ascii" | "pcd" => Ok(Self::PcdAscii),
            other => Err(format!("unknown scan format `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseFormat {
    Kitti,
    Tum,
}

impl FromStr for PoseFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kitti" => Ok(Self::Kitti),
            "tum" => Ok(Self::Tum),
            other => Err(format!("unknown pose format `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub enabled: bool,
    /// Edge length of the downsampling cube, meters.
    pub voxel_size: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            voxel_size: 0.25,
        }
    }
}

fn read(path: &Path, what: &str) -> Result<Vec<u8>, FrameIoError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            FrameIoError::NotFound {
                what: what.to_string(),
                path: path.to_path_buf(),
            }
        } else {
            FrameIoError::io(path, e)
        }
    })
}

pub fn load_scan(path: &Path, format: ScanFormat) -> Result<Vec<Vector3<f64>>, FrameIoError> {
    let bytes = read(path, "scan")?;
    parse_scan(&bytes, format)
}

pub fn parse_scan(bytes: &[u8], format: ScanFormat) -> Result<Vec<Vector3<f64>>, FrameIoError> {
    let points = match format {
        ScanFormat::BinXyzi => parse_bin_xyzi(bytes)?,
        ScanFormat::Ply => parse_ply(bytes)?,
        ScanFormat::PcdAscii => parse_pcd_ascii(bytes)?,
    };
    if points.is_empty() {
        return Err(FrameIoError::EmptyScan);
    }
    Ok(points)
}

fn finite_point(format: &'static str, x: f64, y: f64, z: f64) -> Result<Vector3<f64>, FrameIoError> {
    if x.is_finite() && y.is_finite() && z.is_finite() {
        Ok(Vector3::new(x, y, z))
    } else {
        Err(FrameIoError::format(format, "non-finite coordinate"))
    }
}

pub fn parse_bin_xyzi(bytes: &[u8]) -> Result<Vec<Vector3<f64>>, FrameIoError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(FrameIoError::format(
            "bin-xyzi",
            format!("length {} is not a multiple of 16", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64;
            finite_point("bin-xyzi", f(0), f(4), f(8))
        })
        .collect()
}

pub fn encode_bin_xyzi(points: &[Vector3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<(String, PlyType)>,
}

fn next_header_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    if *pos >= bytes.len() {
        return None;
    }
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
    *pos += (end + 1).min(rest.len());
    std::str::from_utf8(&rest[..end]).ok().map(|s| s.trim_end_matches('\r'))
}

pub fn parse_ply(bytes: &[u8]) -> Result<Vec<Vector3<f64>>, FrameIoError> {
    const F: &str = "ply";
    let mut pos = 0;
    if next_header_line(bytes, &mut pos).map(str::trim) != Some("ply") {
        return Err(FrameIoError::format(F, "missing `ply` magic"));
    }
    let mut binary = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = next_header_line(bytes, &mut pos)
            .ok_or_else(|| FrameIoError::format(F, "header not terminated"))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, ..] => {
                return Err(FrameIoError::format(F, format!("unsupported format `{other}`")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| FrameIoError::format(F, format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements
                    .last()
                    .ok_or_else(|| FrameIoError::format(F, "property before element"))?;
                if el.name == "vertex" {
                    return Err(FrameIoError::format(F, "list property on vertex element"));
                }
                // list properties are only legal on elements after the vertices,
                // which are never read
                elements.last_mut().unwrap().properties.push((String::new(), PlyType::U8));
            }
            ["property", ty, name] => {
                let ty = PlyType::parse(ty)
                    .ok_or_else(|| FrameIoError::format(F, format!("unknown type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| FrameIoError::format(F, "property before element"))?
                    .properties
                    .push((name.to_string(), ty));
            }
            _ => return Err(FrameIoError::format(F, format!("unexpected header line `{line}`"))),
        }
    }
    let binary = binary.ok_or_else(|| FrameIoError::format(F, "missing format line"))?;
    let first = elements
        .first()
        .ok_or_else(|| FrameIoError::format(F, "no elements"))?;
    if first.name != "vertex" {
        return Err(FrameIoError::format(F, "first element must be `vertex`"));
    }
    let vertex = first;
    let find = |axis: &str| {
        vertex
            .properties
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| FrameIoError::format(F, format!("missing property `{axis}`")))
    };
    let (ix, iy, iz) = (find("x")?, find("y")?, find("z")?);
    let body = &bytes[pos..];
    let mut points = Vec::with_capacity(vertex.count.min(1 << 20));
    if binary {
        let offsets: Vec<usize> = vertex
            .properties
            .iter()
            .scan(0, |acc, (_, t)| {
                let o = *acc;
                *acc += t.size();
                Some(o)
            })
            .collect();
        let stride: usize = vertex.properties.iter().map(|(_, t)| t.size()).sum();
        let needed = stride
            .checked_mul(vertex.count)
            .ok_or_else(|| FrameIoError::format(F, "vertex count overflow"))?;
        if body.len() < needed {
            return Err(FrameIoError::format(F, "truncated binary body"));
        }
        for rec in body[..needed].chunks_exact(stride.max(1)) {
            let get = |i: usize| vertex.properties[i].1.read_le(&rec[offsets[i]..]);
            points.push(finite_point(F, get(ix), get(iy), get(iz))?);
        }
    } else {
        let text = std::str::from_utf8(body)
            .map_err(|_| FrameIoError::format(F, "ascii body is not utf-8"))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        for _ in 0..vertex.count {
            let line = lines
                .next()
                .ok_or_else(|| FrameIoError::format(F, "fewer vertex lines than declared"))?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() < vertex.properties.len() {
                return Err(FrameIoError::format(F, "short vertex line"));
            }
            let get = |i: usize| {
                values[i]
                    .parse::<f64>()
                    .map_err(|_| FrameIoError::format(F, format!("bad number `{}`", values[i])))
            };
            points.push(finite_point(F, get(ix)?, get(iy)?, get(iz)?)?);
        }
    }
    Ok(points)
}

pub fn parse_pcd_ascii(bytes: &[u8]) -> Result<Vec<Vector3<f64>>, FrameIoError> {
    const F: &str = "pcd";
    let text =
        std::str::from_utf8(bytes).map_err(|_| FrameIoError::format(F, "not utf-8 text"))?;
    let mut lines = text.lines();
    let mut fields: Option<Vec<String>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut declared: Option<usize> = None;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| FrameIoError::format(F, "missing DATA line"))?
            .trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or_default().to_ascii_uppercase();
        let rest: Vec<&str> = tokens.collect();
        match key.as_str() {
            "FIELDS" => fields = Some(rest.iter().map(|s| s.to_string()).collect()),
            "COUNT" => {
                counts = Some(
                    rest.iter()
                        .map(|c| c.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| FrameIoError::format(F, "bad COUNT"))?,
                )
            }
            "POINTS" => {
                declared = Some(
                    rest.first()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| FrameIoError::format(F, "bad POINTS"))?,
                )
            }
            "DATA" => {
                if rest.first().map(|s| s.to_ascii_lowercase()) != Some("ascii".into()) {
                    return Err(FrameIoError::format(F, "only DATA ascii is supported"));
                }
                break;
            }
            "VERSION" | "SIZE" | "TYPE" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            other => return Err(FrameIoError::format(F, format!("unknown header key `{other}`"))),
        }
    }
    let fields = fields.ok_or_else(|| FrameIoError::format(F, "missing FIELDS"))?;
    let counts = counts.unwrap_or_else(|| vec![1; fields.len()]);
    if counts.len() != fields.len() {
        return Err(FrameIoError::format(F, "COUNT and FIELDS differ in length"));
    }
    // column of each field's first value
    let mut column = Vec::with_capacity(fields.len());
    let mut acc = 0usize;
    for c in &counts {
        column.push(acc);
        acc = acc.saturating_add(*c);
    }
    let width = acc;
    let find = |axis: &str| {
        fields
            .iter()
            .position(|f| f == axis)
            .map(|i| column[i])
            .ok_or_else(|| FrameIoError::format(F, format!("missing field `{axis}`")))
    };
    let (ix, iy, iz) = (find("x")?, find("y")?, find("z")?);
    let mut points = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() < width {
            return Err(FrameIoError::format(F, "short data line"));
        }
        let get = |i: usize| {
            values[i]
                .parse::<f64>()
                .map_err(|_| FrameIoError::format(F, format!("bad number `{}`", values[i])))
        };
        points.push(finite_point(F, get(ix)?, get(iy)?, get(iz)?)?);
    }
    if let Some(n) = declared {
        if n != points.len() {
            return Err(FrameIoError::format(
                F,
                format!("POINTS says {n}, found {}", points.len()),
            ));
        }
    }
    Ok(points)
}

pub fn load_trajectory(path: &Path, format: PoseFormat) -> Result<Trajectory, FrameIoError> {
    let bytes = read(path, "poses")?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| FrameIoError::format("trajectory", "not utf-8 text"))?;
    parse_trajectory(text, format)
}

pub fn parse_trajectory(text: &str, format: PoseFormat) -> Result<Trajectory, FrameIoError> {
    let mut poses = Vec::new();
    let mut stamps = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| FrameIoError::format("trajectory", format!("line {}: bad number", lineno + 1)))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FrameIoError::format(
                "trajectory",
                format!("line {}: non-finite value", lineno + 1),
            ));
        }
        match format {
            PoseFormat::Kitti => {
                if values.len() != 12 {
                    return Err(FrameIoError::format(
                        "kitti",
                        format!("line {}: expected 12 numbers, got {}", lineno + 1, values.len()),
                    ));
                }
                let r = Matrix3::new(
                    values[0], values[1], values[2], values[4], values[5], values[6], values[8],
                    values[9], values[10],
                );
                let det = r.determinant();
                if (det - 1.0).abs() > 1e-3 {
                    return Err(FrameIoError::NonRigidRotation {
                        line: lineno + 1,
                        det,
                    });
                }
                let t = Vector3::new(values[3], values[7], values[11]);
                stamps.push(poses.len() as f64);
                poses.push(Pose::from_approx_rotation(r, t));
            }
            PoseFormat::Tum => {
                if values.len() != 8 {
                    return Err(FrameIoError::format(
                        "tum",
                        format!("line {}: expected 8 fields, got {}", lineno + 1, values.len()),
                    ));
                }
                let q = Quaternion::new(values[7], values[4], values[5], values[6]);
                if q.norm() < 1e-12 {
                    return Err(FrameIoError::format(
                        "tum",
                        format!("line {}: zero quaternion", lineno + 1),
                    ));
                }
                let q = UnitQuaternion::from_quaternion(q);
                let t = Vector3::new(values[1], values[2], values[3]);
                stamps.push(values[0]);
                poses.push(Pose::new(*q.to_rotation_matrix().matrix(), t));
            }
        }
    }
    Ok(Trajectory { poses, stamps })
}

pub fn format_trajectory(trajectory: &Trajectory, format: PoseFormat) -> String {
    let mut out = String::new();
    for (i, pose) in trajectory.poses.iter().enumerate() {
        match format {
            PoseFormat::Kitti => {
                let row = pose.to_row_major_3x4();
                let fields: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&fields.join(" "));
            }
            PoseFormat::Tum => {
                let stamp = trajectory.stamps.get(i).copied().unwrap_or(i as f64);
                let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
                    *pose.rotation(),
                ));
                let t = pose.translation();
                let _ = write!(
                    out,
                    "{stamp:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e}",
                    t.x, t.y, t.z, q.i, q.j, q.k, q.w
                );
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory(
    trajectory: &Trajectory,
    path: &Path,
    format: PoseFormat,
) -> Result<(), FrameIoError> {
    fs::write(path, format_trajectory(trajectory, format)).map_err(|e| FrameIoError::io(path, e))
}

/// Binary little-endian PLY with float x, y, z per vertex.
pub fn encode_ply(points: &[Vector3<f64>]) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    let mut out = header.into_bytes();
    out.reserve(points.len() * 12);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Transforms every frame's points by the matching pose and writes one PLY.
pub fn write_map(frames: &[Frame], poses: &[Pose], path: &Path) -> Result<(), FrameIoError> {
    if frames.len() != poses.len() {
        return Err(FrameIoError::LengthMismatch {
            poses: poses.len(),
            frames: frames.len(),
        });
    }
    let points = merged_map(frames, poses);
    fs::write(path, encode_ply(&points)).map_err(|e| FrameIoError::io(path, e))
}

pub fn merged_map(frames: &[Frame], poses: &[Pose]) -> Vec<Vector3<f64>> {
    frames
        .iter()
        .zip(poses)
        .flat_map(|(f, pose)| f.points.iter().map(move |p| pose.transform_point(p)))
        .collect()
}

/// Voxel-centroid downsampling: one point per occupied cube of `voxel_size`.
pub fn filter_points(points: &[Vector3<f64>], config: &FilterConfig) -> Vec<Vector3<f64>> {
    if !config.enabled {
        return points.to_vec();
    }
    assert!(config.voxel_size > 0.0, "voxel size must be positive");
    let inv = 1.0 / config.voxel_size;
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in points {
        let key = [
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        ];
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[slot].0 += p;
        sums[slot].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

/// Scan files in `dir` with a recognized extension, sorted by file name.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>, FrameIoError> {
    let entries = fs::read_dir(dir).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            FrameIoError::NotFound {
                what: "scans".into(),
                path: dir.to_path_buf(),
            }
        } else {
            FrameIoError::io(dir, e)
        }
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FrameIoError::io(dir, e))?.path();
        if path.is_file() && ScanFormat::from_extension(&path).is_some() {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

/// Loads every scan in `dir` and pairs it with the trajectory pose of the same rank.
pub fn load_sequence(
    dir: &Path,
    trajectory: &Trajectory,
    filter: &FilterConfig,
) -> Result<Vec<Frame>, FrameIoError> {
    let paths = list_scans(dir)?;
    if paths.len() != trajectory.len() {
        return Err(FrameIoError::CountMismatch {
            scans: paths.len(),
            poses: trajectory.len(),
        });
    }
    let clouds: Vec<Vec<Vector3<f64>>> = paths
        .par_iter()
        .map(|p| {
            let format = ScanFormat::from_extension(p).expect("filtered by list_scans");
            load_scan(p, format).map(|pts| filter_points(&pts, filter))
        })
        .collect::<Result<_, _>>()?;
    Ok(clouds
        .into_iter()
        .zip(&trajectory.poses)
        .enumerate()
        .map(|(i, (points, pose))| Frame::new(i, points, *pose))
        .collect())
}

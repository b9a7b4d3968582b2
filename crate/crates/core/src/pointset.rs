//! Motion grids to normalized point sets, plus the DV3P file format.
//!
//! DV3P layout (little-endian): `"DV3P"`, `u32` version (1), `u32` point
//! count `N`, `u32` motion channel count `C`, then `N` records of `3 + C`
//! `f32` values `(x, y, z, m_G, m_1, .., m_{C-1})`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::depth_io::{CameraIntrinsics, DepthFrame, PointCloud};
use crate::error::{Error, Result};
use crate::proposal::{crop, ProposalRegion};
use crate::rankpool::{plan_splits, MotionGrid};
use crate::voxel::{GridSpec, VoxelIndex};

pub const DV3P_MAGIC: &[u8; 4] = b"DV3P";
pub const DV3P_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointSetMeta {
    /// Lattice the points were abstracted from; unknown for files.
    pub spec: Option<GridSpec>,
    pub splits: usize,
}

/// Points with `channels` motion values each, global channel first.
#[derive(Debug, Clone, PartialEq)]
pub struct DvPointSet {
    pub coords: Vec<[f64; 3]>,
    /// Row-major `len() × channels`.
    pub motion: Vec<f64>,
    pub channels: usize,
    pub meta: PointSetMeta,
}

impl DvPointSet {
    pub fn new(coords: Vec<[f64; 3]>, motion: Vec<f64>, channels: usize) -> Result<Self> {
        if motion.len() != coords.len() * channels {
            return Err(Error::InvalidArgument(format!(
                "{} motion values for {} points x {} channels",
                motion.len(),
                coords.len(),
                channels
            )));
        }
        Ok(Self {
            coords,
            motion,
            channels,
            meta: PointSetMeta {
                spec: None,
                splits: channels.saturating_sub(1),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn motion_of(&self, i: usize) -> &[f64] {
        &self.motion[i * self.channels..(i + 1) * self.channels]
    }

    /// Keeps only the first `channels` motion channels (0 = geometry only).
    pub fn with_channels(&self, channels: usize) -> Self {
        let keep = channels.min(self.channels);
        let motion = (0..self.len())
            .flat_map(|i| self.motion_of(i)[..keep].iter().copied())
            .collect();
        Self {
            coords: self.coords.clone(),
            motion,
            channels: keep,
            meta: self.meta,
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let mut out = self.clone();
        normalize_coords(&mut out.coords);
        normalize_motion(&mut out.motion);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppearancePointSet {
    pub coords: Vec<[f64; 3]>,
    pub split_index: usize,
}

impl AppearancePointSet {
    pub fn normalized(&self) -> Result<Self> {
        if self.coords.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let mut out = self.clone();
        normalize_coords(&mut out.coords);
        Ok(out)
    }

    /// As a point set with no motion channels.
    pub fn to_dv(&self) -> DvPointSet {
        DvPointSet {
            coords: self.coords.clone(),
            motion: Vec::new(),
            channels: 0,
            meta: PointSetMeta::default(),
        }
    }
}

/// Anything `normalize` applies to.
pub trait Normalize: Sized {
    fn normalize(&self) -> Result<Self>;
}

impl Normalize for DvPointSet {
    fn normalize(&self) -> Result<Self> {
        self.normalized()
    }
}

impl Normalize for AppearancePointSet {
    fn normalize(&self) -> Result<Self> {
        self.normalized()
    }
}

pub fn normalize<P: Normalize>(ps: &P) -> Result<P> {
    ps.normalize()
}

/// Maps y onto `[-0.5, 0.5]` and centres x and z with the same scale, so the
/// shape keeps its aspect ratio.
pub fn normalize_coords(coords: &mut [[f64; 3]]) {
    if coords.is_empty() {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in coords.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = hi[1] - lo[1];
    let scale = if span > 0.0 { span } else { 1.0 };
    let centre = [0, 1, 2].map(|a| (lo[a] + hi[a]) / 2.0);
    for p in coords.iter_mut() {
        for a in 0..3 {
            p[a] = (p[a] - centre[a]) / scale;
        }
    }
}

/// Linear map of all values jointly onto `[-0.5, 0.5]`; a constant input maps
/// to zeros.
pub fn normalize_motion(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range - 0.5 } else { 0.0 };
    }
}

/// One point per voxel with any nonzero motion channel, in voxel-index
/// coordinates, channels ordered `(m_G, m_1, .., m_n)`.
pub fn assemble(global: &MotionGrid, splits: &[MotionGrid]) -> Result<DvPointSet> {
    if splits.iter().any(|s| s.spec != global.spec) {
        return Err(Error::MismatchedSpecs);
    }
    let channels = 1 + splits.len();
    let mut rows: BTreeMap<VoxelIndex, Vec<f64>> = BTreeMap::new();
    for (c, grid) in std::iter::once(global).chain(splits).enumerate() {
        for (idx, &m) in &grid.motion {
            rows.entry(*idx).or_insert_with(|| vec![0.0; channels])[c] = m;
        }
    }
    let mut coords = Vec::new();
    let mut motion = Vec::new();
    for (idx, row) in rows {
        if row.iter().all(|&m| m == 0.0) {
            continue;
        }
        coords.push(idx.map(|i| i as f64));
        motion.extend(row);
    }
    Ok(DvPointSet {
        coords,
        motion,
        channels,
        meta: PointSetMeta {
            spec: Some(global.spec),
            splits: splits.len(),
        },
    })
}

/// Middle frame of each of `t2` splits, cropped to its proposal region and
/// normalized.
pub fn appearance_inputs(
    clouds: &[PointCloud],
    frames: &[DepthFrame],
    regions: &[ProposalRegion],
    k: &CameraIntrinsics,
    t2: usize,
) -> Result<Vec<AppearancePointSet>> {
    if clouds.len() != frames.len() || regions.len() != frames.len() {
        return Err(Error::InvalidArgument("clouds, frames and regions must align".into()));
    }
    let plan = plan_splits(clouds.len(), t2)?;
    plan.middles()
        .into_iter()
        .enumerate()
        .map(|(split_index, t)| {
            let cropped = crop(&clouds[t], &regions[t], &frames[t], k);
            AppearancePointSet {
                coords: cropped.points,
                split_index,
            }
            .normalized()
        })
        .collect()
}

pub fn encode_pointset(ps: &DvPointSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ps.len() * (3 + ps.channels) * 4);
    out.extend_from_slice(DV3P_MAGIC);
    for v in [DV3P_VERSION, ps.len() as u32, ps.channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..ps.len() {
        for v in ps.coords[i].iter().chain(ps.motion_of(i)) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pointset(bytes: &[u8]) -> Result<DvPointSet> {
    if bytes.len() < 4 || &bytes[..4] != DV3P_MAGIC {
        return Err(Error::BadMagic { expected: "DV3P" });
    }
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 + 4 * i..8 + 4 * i)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Truncated("DV3P header".into()))
    };
    let version = word(0)?;
    if version != DV3P_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = word(1)? as usize;
    let channels = word(2)? as usize;
    let stride = 3 + channels;
    let body = &bytes[16..];
    let need = n
        .checked_mul(stride * 4)
        .ok_or_else(|| Error::Truncated("DV3P size overflow".into()))?;
    if body.len() < need {
        return Err(Error::Truncated(format!(
            "DV3P body holds {} bytes, expected {need}",
            body.len()
        )));
    }
    let values: Vec<f64> = body[..need]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut coords = Vec::with_capacity(n);
    let mut motion = Vec::with_capacity(n * channels);
    for rec in values.chunks_exact(stride) {
        coords.push([rec[0], rec[1], rec[2]]);
        motion.extend_from_slice(&rec[3..]);
    }
    DvPointSet::new(coords, motion, channels)
}

pub fn write_pointset(path: &Path, ps: &DvPointSet) -> Result<()> {
    fs::write(path, encode_pointset(ps)).map_err(|e| Error::io(path, e))
}

pub fn read_pointset(path: &Path) -> Result<DvPointSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pointset(&bytes)
}

/// ASCII PLY with `x y z` and one scalar property per motion channel.
pub fn write_ply(path: &Path, ps: &DvPointSet) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", ps.len())?;
        for axis in ["x", "y", "z"] {
            writeln!(w, "property float {axis}")?;
        }
        for c in 0..ps.channels {
            if c == 0 {
                writeln!(w, "property float m_g")?;
            } else {
                writeln!(w, "property float m_{c}")?;
            }
        }
        writeln!(w, "end_header")?;
        for i in 0..ps.len() {
            let row: Vec<String> = ps.coords[i]
                .iter()
                .chain(ps.motion_of(i))
                .map(|v| format!("{}", *v as f32))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

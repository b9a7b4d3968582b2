//! Depth frame decoding and pinhole back-projection.
//!
//! Two on-disk layouts are supported:
//!
//! * a directory of 16-bit grayscale PNG files, one per frame, read in
//!   lexicographic filename order;
//! * a `.d16` container: `"DV3D"`, then little-endian `u32` version (1),
//!   width, height and frame count, followed by the frames as row-major
//!   little-endian `u16` millimetre values.
//!
//! Depth is in millimetres and `0` marks an invalid pixel.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::error::{Error, Result};

pub const D16_MAGIC: &[u8; 4] = b"DV3D";
pub const D16_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major depth in millimetres.
    pub data: Vec<u16>,
    pub timestamp_index: usize,
}

impl DepthFrame {
    pub fn new(width: u32, height: u32, data: Vec<u16>, timestamp_index: usize) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "depth buffer holds {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            timestamp_index,
        })
    }

    pub fn zeros(width: u32, height: u32, timestamp_index: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
            timestamp_index,
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn valid_pixels(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "intrinsics need positive focal lengths, got fx={fx} fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// fx = fy = 280 with the principal point at the image centre.
    pub fn default_for(width: u32, height: u32) -> Self {
        Self {
            fx: 280.0,
            fy: 280.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        Self::new(
            kv.require("fx")?,
            kv.require("fy")?,
            kv.require("cx")?,
            kv.require("cy")?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(&KeyValues::load(path)?)
    }

    /// Projects a camera-space point (y up) to continuous pixel coordinates.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (p[0] * self.fx / p[2] + self.cx, -p[1] * self.fy / p[2] + self.cy)
    }

    /// Nearest source pixel of a back-projected point, if inside the frame.
    pub fn pixel_of(&self, p: [f64; 3], width: u32, height: u32) -> Option<(u32, u32)> {
        let (u, v) = self.project(p);
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
            return None;
        }
        Some((u as u32, v as u32))
    }
}

/// Metric points in camera coordinates: x right, y up, z forward (mm).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn back_project(frame: &DepthFrame, k: &CameraIntrinsics) -> PointCloud {
    let mut points = Vec::with_capacity(frame.valid_pixels());
    let w = frame.width as usize;
    for (i, &d) in frame.data.iter().enumerate() {
        if d == 0 {
            continue;
        }
        let u = (i % w) as f64;
        let v = (i / w) as f64;
        let z = d as f64;
        points.push([(u - k.cx) * z / k.fx, -(v - k.cy) * z / k.fy, z]);
    }
    PointCloud { points }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFormat {
    /// Directory of 16-bit grayscale PNG files.
    PngDir,
    /// Single `.d16` container file.
    D16,
}

impl DepthFormat {
    /// Directories are PNG sequences, everything else a `.d16` container.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            DepthFormat::PngDir
        } else {
            DepthFormat::D16
        }
    }
}

impl std::str::FromStr for DepthFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "png" => Ok(DepthFormat::PngDir),
            "d16" => Ok(DepthFormat::D16),
            other => Err(Error::Parse(format!("unknown depth format `{other}`"))),
        }
    }
}

pub fn decode_depth_sequence(path: &Path, format: DepthFormat) -> Result<Vec<DepthFrame>> {
    let frames = match format {
        DepthFormat::PngDir => read_png_dir(path)?,
        DepthFormat::D16 => read_d16(path)?,
    };
    check_sequence(&frames)?;
    Ok(frames)
}

fn check_sequence(frames: &[DepthFrame]) -> Result<()> {
    let first = frames.first().ok_or(Error::ZeroFrames)?;
    for f in frames {
        if (f.width, f.height) != (first.width, first.height) {
            return Err(Error::InconsistentResolution {
                expected: (first.width, first.height),
                found: (f.width, f.height),
            });
        }
    }
    Ok(())
}

fn read_png_dir(dir: &Path) -> Result<Vec<DepthFrame>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    files.iter().enumerate().map(|(i, p)| read_png(p, i)).collect()
}

fn read_png(path: &Path, index: usize) -> Result<DepthFrame> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    DepthFrame::new(w, h, gray.into_raw(), index)
}

pub fn write_png_dir(dir: &Path, frames: &[DepthFrame]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in frames {
        let path = dir.join(format!("{:06}.png", f.timestamp_index));
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(f.width, f.height, f.data.clone())
            .ok_or_else(|| Error::InvalidArgument("frame buffer size".into()))?;
        buf.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated("d16 header".into()))
}

pub fn read_d16(path: &Path) -> Result<Vec<DepthFrame>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_d16(&bytes)
}

pub fn parse_d16(bytes: &[u8]) -> Result<Vec<DepthFrame>> {
    if bytes.len() < 4 || &bytes[..4] != D16_MAGIC {
        return Err(Error::BadMagic { expected: "DV3D" });
    }
    let version = read_u32(bytes, 4)?;
    if version != D16_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = read_u32(bytes, 8)?;
    let height = read_u32(bytes, 12)?;
    let count = read_u32(bytes, 16)? as usize;
    let pixels = width as usize * height as usize;
    let body = &bytes[20..];
    if body.len() < count * pixels * 2 {
        return Err(Error::Truncated(format!(
            "d16 body holds {} bytes, expected {}",
            body.len(),
            count * pixels * 2
        )));
    }
    let frames = (0..count)
        .map(|i| {
            let chunk = &body[i * pixels * 2..(i + 1) * pixels * 2];
            let data = chunk
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            DepthFrame {
                width,
                height,
                data,
                timestamp_index: i,
            }
        })
        .collect();
    Ok(frames)
}

pub fn write_d16(path: &Path, frames: &[DepthFrame]) -> Result<()> {
    check_sequence(frames)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let first = &frames[0];
    let mut write = || -> std::io::Result<()> {
        w.write_all(D16_MAGIC)?;
        for v in [D16_VERSION, first.width, first.height, frames.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for f in frames {
            for d in &f.data {
                w.write_all(&d.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

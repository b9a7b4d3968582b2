//! Action proposal: depth-histogram thresholding inside an optional person box.

use std::collections::BTreeMap;
use std::path::Path;

use crate::depth_io::{CameraIntrinsics, DepthFrame, PointCloud};
use crate::error::{Error, Result};

pub const BIN_WIDTH_MM: u32 = 100;
pub const THRESHOLD_MARGIN_MM: f64 = 200.0;

/// Axis-aligned pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    #[inline]
    pub fn contains(&self, u: u32, v: u32) -> bool {
        u >= self.x && v >= self.y && u - self.x < self.w && v - self.y < self.h
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        let fits = self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64;
        if fits {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "bbox {self:?} outside {width}x{height} frame"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthHistogram {
    pub bin_width: u32,
    pub counts: Vec<u64>,
}

impl DepthHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalRegion {
    pub bbox: Option<BBox>,
    pub depth_threshold: f64,
}

/// Counts nonzero depths inside `bbox` (or the whole frame) in half-open
/// 100 mm bins.
pub fn build_histogram(frame: &DepthFrame, bbox: Option<&BBox>) -> Result<DepthHistogram> {
    if let Some(b) = bbox {
        b.check_within(frame.width, frame.height)?;
    }
    let mut counts: Vec<u64> = Vec::new();
    let (u0, v0, u1, v1) = match bbox {
        Some(b) => (b.x, b.y, b.x + b.w, b.y + b.h),
        None => (0, 0, frame.width, frame.height),
    };
    for v in v0..v1 {
        for u in u0..u1 {
            let d = frame.get(u, v);
            if d == 0 {
                continue;
            }
            let bin = (d as u32 / BIN_WIDTH_MM) as usize;
            if bin >= counts.len() {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(DepthHistogram {
        bin_width: BIN_WIDTH_MM,
        counts,
    })
}

/// Centre of the most populated bin plus 200 mm. Ties go to the nearer bin.
pub fn compute_threshold(h: &DepthHistogram) -> Result<f64> {
    let mut best: Option<(usize, u64)> = None;
    for (i, &c) in h.counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
            best = Some((i, c));
        }
    }
    let (bin, _) = best.ok_or(Error::EmptyRegion)?;
    let w = h.bin_width as f64;
    Ok(bin as f64 * w + w / 2.0 + THRESHOLD_MARGIN_MM)
}

/// Keeps points whose source pixel lies in the box and whose depth is
/// strictly below the threshold.
pub fn crop(cloud: &PointCloud, region: &ProposalRegion, frame: &DepthFrame, k: &CameraIntrinsics) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|p| p[2] < region.depth_threshold)
        .filter(|p| match &region.bbox {
            None => true,
            Some(b) => k
                .pixel_of(**p, frame.width, frame.height)
                .is_some_and(|(u, v)| b.contains(u, v)),
        })
        .copied()
        .collect();
    PointCloud { points }
}

/// How one depth threshold is chosen for a whole clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdPolicy {
    /// Threshold of the first frame.
    FirstFrame,
    /// Largest per-frame threshold over the clip.
    #[default]
    MaxOverFrames,
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::FirstFrame),
            "max" => Ok(Self::MaxOverFrames),
            other => Err(Error::Parse(format!("unknown threshold policy `{other}`"))),
        }
    }
}

pub fn video_threshold(frames: &[DepthFrame], boxes: &BBoxTrack, policy: ThresholdPolicy) -> Result<f64> {
    let frame_threshold =
        |f: &DepthFrame| -> Result<f64> { compute_threshold(&build_histogram(f, boxes.get(f.timestamp_index))?) };
    match policy {
        ThresholdPolicy::FirstFrame => frame_threshold(frames.first().ok_or(Error::ZeroFrames)?),
        ThresholdPolicy::MaxOverFrames => {
            let mut best = f64::NEG_INFINITY;
            for f in frames {
                best = best.max(frame_threshold(f)?);
            }
            if frames.is_empty() {
                return Err(Error::ZeroFrames);
            }
            Ok(best)
        }
    }
}

/// Per-frame person boxes; frames without an entry are not box-restricted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BBoxTrack {
    boxes: BTreeMap<usize, BBox>,
}

impl BBoxTrack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame_index: usize, bbox: BBox) {
        self.boxes.insert(frame_index, bbox);
    }

    pub fn get(&self, frame_index: usize) -> Option<&BBox> {
        self.boxes.get(&frame_index)
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn region(&self, frame_index: usize, depth_threshold: f64) -> ProposalRegion {
        ProposalRegion {
            bbox: self.get(frame_index).copied(),
            depth_threshold,
        }
    }

    /// Parses lines of `frame_index x y w h`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut track = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<u64> = line
                .split_whitespace()
                .map(|t| t.parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bbox line {}: `{line}`", lineno + 1)))?;
            let [idx, x, y, w, h] = fields[..] else {
                return Err(Error::Parse(format!("bbox line {}: expected 5 integers", lineno + 1)));
            };
            let narrow = |v: u64| u32::try_from(v).map_err(|_| Error::Parse(format!("bbox line {}", lineno + 1)));
            track.insert(
                idx as usize,
                BBox {
                    x: narrow(x)?,
                    y: narrow(y)?,
                    w: narrow(w)?,
                    h: narrow(h)?,
                },
            );
        }
        Ok(track)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.boxes
            .iter()
            .map(|(i, b)| format!("{i} {} {} {} {}\n", b.x, b.y, b.w, b.h))
            .collect()
    }
}

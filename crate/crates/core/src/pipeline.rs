//! Depth clip to point sets: proposal, voxelization, rank pooling and
//! pointlization, each timed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::KeyValues;
use crate::depth_io::{back_project, decode_depth_sequence, CameraIntrinsics, DepthFormat, DepthFrame, PointCloud};
use crate::error::{Error, Result};
use crate::pointset::{appearance_inputs, assemble, DvPointSet};
use crate::proposal::{crop, video_threshold, BBoxTrack, ProposalRegion, ThresholdPolicy};
use crate::rankpool::{plan_splits, pool, PoolingMode, RankPoolConfig};
use crate::voxel::{fit_grid, voxelize};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Voxel edge, mm.
    pub voxel_size: f64,
    /// Temporal splits pooled besides the global one.
    pub t1: usize,
    /// Appearance frames.
    pub t2: usize,
    pub pooling: PoolingMode,
    /// Points sampled per stream by the network.
    pub points: usize,
    pub intrinsics: Option<PathBuf>,
    pub proposal: bool,
    pub threshold_policy: ThresholdPolicy,
    pub rank: RankPoolConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 35.0,
            t1: 4,
            t2: 3,
            pooling: PoolingMode::Approx,
            points: 2048,
            intrinsics: None,
            proposal: true,
            threshold_policy: ThresholdPolicy::MaxOverFrames,
            rank: RankPoolConfig::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "voxel_size",
    "splits",
    "appearance_frames",
    "pooling",
    "points",
    "intrinsics",
    "proposal",
    "threshold_policy",
    "lambda",
    "max_iters",
    "step_size",
    "tol",
];

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("key `{key}`: expected on/off, got `{v}`"))),
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t1 < 1 || self.t2 < 1 || !(self.voxel_size > 0.0) || self.points == 0 {
            return Err(Error::InvalidArgument(format!(
                "pipeline needs T1 ≥ 1, T2 ≥ 1, positive voxel size and points, got {self:?}"
            )));
        }
        self.rank.validate()
    }

    /// Applies `key = value` overrides. Relative intrinsics paths resolve
    /// against `base`.
    pub fn apply(&mut self, kv: &KeyValues, base: &Path) -> Result<()> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(Error::Parse(format!("unknown config key `{k}`")));
        }
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get_parsed($key)? {
                    $field = v;
                }
            };
        }
        set!("voxel_size", self.voxel_size);
        set!("splits", self.t1);
        set!("appearance_frames", self.t2);
        set!("pooling", self.pooling);
        set!("points", self.points);
        set!("threshold_policy", self.threshold_policy);
        set!("lambda", self.rank.lambda);
        set!("max_iters", self.rank.max_iters);
        set!("step_size", self.rank.step_size);
        set!("tol", self.rank.tol);
        if let Some(v) = kv.get("proposal") {
            self.proposal = parse_bool("proposal", v)?;
        }
        if let Some(v) = kv.get("intrinsics") {
            self.intrinsics = Some(base.join(v));
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&KeyValues::load(path)?, path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    pub fn camera(&self, width: u32, height: u32) -> Result<CameraIntrinsics> {
        match &self.intrinsics {
            Some(p) => CameraIntrinsics::load(p),
            None => Ok(CameraIntrinsics::default_for(width, height)),
        }
    }
}

/// Wall-clock milliseconds per stage for one clip.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub proposal_ms: f64,
    pub voxelization_ms: f64,
    pub rank_pooling_ms: f64,
    pub pointlization_ms: f64,
}

impl StageTimings {
    pub fn report(&self) -> String {
        format!(
            "proposal {:.1} ms\nvoxelization {:.1} ms\nrank pooling {:.1} ms\npointlization {:.1} ms\n",
            self.proposal_ms, self.voxelization_ms, self.rank_pooling_ms, self.pointlization_ms
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    /// Normalized motion point set with `t1 + 1` channels; empty for a clip
    /// with no motion.
    pub motion: DvPointSet,
    /// `t2` normalized appearance point sets without motion channels.
    pub appearance: Vec<DvPointSet>,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn extract(
    frames: &[DepthFrame],
    boxes: &BBoxTrack,
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<Extracted> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::ZeroFrames.in_stage("proposal"));
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (clouds, regions) = propose(frames, boxes, k, cfg).map_err(|e| e.in_stage("proposal"))?;
    timings.proposal_ms = ms(t);

    let t = Instant::now();
    let cropped: Vec<PointCloud> = clouds
        .iter()
        .zip(&regions)
        .zip(frames)
        .map(|((c, r), f)| crop(c, r, f, k))
        .collect();
    let spec = fit_grid(&cropped, cfg.voxel_size).map_err(|e| e.in_stage("voxelization"))?;
    let grids: Vec<_> = cropped.iter().map(|c| voxelize(c, &spec)).collect();
    timings.voxelization_ms = ms(t);

    let t = Instant::now();
    let pooled = (|| {
        let global = pool(&grids, cfg.pooling, &cfg.rank)?;
        let plan = plan_splits(grids.len(), cfg.t1)?;
        let splits = plan
            .ranges
            .iter()
            .map(|r| pool(&grids[r.clone()], cfg.pooling, &cfg.rank))
            .collect::<Result<Vec<_>>>()?;
        Ok((global, splits))
    })();
    let (global, splits) = pooled.map_err(|e: Error| e.in_stage("rank pooling"))?;
    timings.rank_pooling_ms = ms(t);

    let t = Instant::now();
    let points = (|| {
        let assembled = assemble(&global, &splits)?;
        let motion = if assembled.is_empty() {
            assembled
        } else {
            assembled.normalized()?
        };
        let appearance = appearance_inputs(&clouds, frames, &regions, k, cfg.t2)?
            .iter()
            .map(|a| a.to_dv())
            .collect();
        Ok((motion, appearance))
    })();
    let (motion, appearance) = points.map_err(|e: Error| e.in_stage("pointlization"))?;
    timings.pointlization_ms = ms(t);

    Ok(Extracted {
        motion,
        appearance,
        timings,
    })
}

fn propose(
    frames: &[DepthFrame],
    boxes: &BBoxTrack,
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<(Vec<PointCloud>, Vec<ProposalRegion>)> {
    let (w, h) = (frames[0].width, frames[0].height);
    for f in frames {
        if (f.width, f.height) != (w, h) {
            return Err(Error::InconsistentResolution {
                expected: (w, h),
                found: (f.width, f.height),
            });
        }
        if let Some(b) = boxes.get(f.timestamp_index) {
            b.check_within(w, h)?;
        }
    }
    let clouds: Vec<PointCloud> = frames.iter().map(|f| back_project(f, k)).collect();
    let regions = if cfg.proposal {
        let threshold = video_threshold(frames, boxes, cfg.threshold_policy)?;
        frames
            .iter()
            .map(|f| boxes.region(f.timestamp_index, threshold))
            .collect()
    } else {
        vec![
            ProposalRegion {
                bbox: None,
                depth_threshold: f64::INFINITY,
            };
            frames.len()
        ]
    };
    Ok((clouds, regions))
}

/// A depth clip and its person boxes. Boxes come from `bbox_file`, or from
/// a `.bbox` file next to the clip when present.
pub fn load_clip(path: &Path, bbox_file: Option<&Path>) -> Result<(Vec<DepthFrame>, BBoxTrack)> {
    let frames = decode_depth_sequence(path, DepthFormat::detect(path))?;
    let companion = path.with_extension("bbox");
    let boxes = match bbox_file {
        Some(b) => BBoxTrack::load(b)?,
        None if companion.is_file() => BBoxTrack::load(&companion)?,
        None => BBoxTrack::new(),
    };
    Ok((frames, boxes))
}

/// Loads and extracts one clip.
pub fn extract_path(path: &Path, bbox_file: Option<&Path>, cfg: &PipelineConfig) -> Result<Extracted> {
    let (frames, boxes) = load_clip(path, bbox_file).map_err(|e| e.in_stage("decode"))?;
    let k = cfg
        .camera(frames[0].width, frames[0].height)
        .map_err(|e| e.in_stage("intrinsics"))?;
    extract(&frames, &boxes, &k, cfg)
}

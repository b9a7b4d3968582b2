//! Procedural depth clips of a sphere moving in front of a static body slab
//! and a flat wall.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::depth_io::{write_d16, write_png_dir, CameraIntrinsics, DepthFormat, DepthFrame};
use crate::error::{Error, Result};
use crate::proposal::{BBox, BBoxTrack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionClass {
    TranslatePosX,
    TranslateNegX,
    TranslatePosY,
    TranslateNegY,
    /// Towards the camera.
    TranslateNear,
    /// Away from the camera.
    TranslateFar,
    Oscillate,
    Static,
}

impl ActionClass {
    pub const ALL: [ActionClass; 8] = [
        ActionClass::TranslatePosX,
        ActionClass::TranslateNegX,
        ActionClass::TranslatePosY,
        ActionClass::TranslateNegY,
        ActionClass::TranslateNear,
        ActionClass::TranslateFar,
        ActionClass::Oscillate,
        ActionClass::Static,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("class id {id} outside 0..8")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionClass::TranslatePosX => "translate+x",
            ActionClass::TranslateNegX => "translate-x",
            ActionClass::TranslatePosY => "translate+y",
            ActionClass::TranslateNegY => "translate-y",
            ActionClass::TranslateNear => "translate-near",
            ActionClass::TranslateFar => "translate-far",
            ActionClass::Oscillate => "oscillate",
            ActionClass::Static => "static",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub class: ActionClass,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Sphere radius, mm.
    pub radius: f64,
    /// Depth noise standard deviation, mm.
    pub noise: f64,
    /// Seeds the noise and the per-clip trajectory variation.
    pub seed: u64,
    /// Randomize start position, radius and travel per seed.
    pub vary: bool,
}

impl SynthSpec {
    pub fn new(class: ActionClass, seed: u64) -> Self {
        Self {
            class,
            frames: 24,
            width: 160,
            height: 120,
            radius: 250.0,
            noise: 0.0,
            seed,
            vary: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 8 {
            return Err(Error::InvalidArgument(format!(
                "need at least 8 frames, got {}",
                self.frames
            )));
        }
        if !(self.radius > 0.0) || !(self.noise >= 0.0) || self.width < 8 || self.height < 8 {
            return Err(Error::InvalidArgument(format!("invalid synth spec {self:?}")));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::default_for(self.width, self.height)
    }
}

/// A rendered clip with the per-frame silhouette box of sphere and body.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub frames: Vec<DepthFrame>,
    pub boxes: BBoxTrack,
}

struct Trajectory {
    start: [f64; 3],
    travel: [f64; 3],
    radius: f64,
    oscillate: bool,
    body: Body,
}

/// Fronto-parallel rectangle standing behind the sphere's path.
struct Body {
    center: [f64; 3],
    half: [f64; 2],
}

impl Body {
    fn hit(&self, dir: [f64; 3]) -> Option<f64> {
        let z = self.center[2];
        let inside =
            (dir[0] * z - self.center[0]).abs() <= self.half[0] && (dir[1] * z - self.center[1]).abs() <= self.half[1];
        inside.then_some(z)
    }
}

const NEAR_MM: f64 = 2500.0;
const FAR_MM: f64 = 3100.0;
/// Body slab distance behind the middle of the sphere's path.
const BODY_GAP_MM: f64 = 550.0;
/// Wall distance behind the farthest object.
const WALL_GAP_MM: f64 = 1500.0;

fn trajectory(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut u = |lo: f64, hi: f64| {
        if spec.vary {
            rng.random_range(lo..=hi)
        } else {
            (lo + hi) / 2.0
        }
    };
    let radius = spec.radius * u(0.88, 1.12);
    let ax = u(400.0, 500.0);
    let ay = u(300.0, 380.0);
    let off = [u(-50.0, 50.0), u(-40.0, 40.0), u(-60.0, 60.0)];
    let mid = [off[0], off[1], (NEAR_MM + FAR_MM) / 2.0 + off[2]];
    let depth_travel = FAR_MM - NEAR_MM - 120.0;
    let line = |axis: usize, amount: f64| {
        let mut start = mid;
        let mut travel = [0.0; 3];
        start[axis] -= amount / 2.0;
        travel[axis] = amount;
        (start, travel)
    };
    let (start, travel) = match spec.class {
        ActionClass::TranslatePosX => line(0, ax),
        ActionClass::TranslateNegX => line(0, -ax),
        ActionClass::TranslatePosY => line(1, ay),
        ActionClass::TranslateNegY => line(1, -ay),
        ActionClass::TranslateNear => line(2, -depth_travel),
        ActionClass::TranslateFar => line(2, depth_travel),
        ActionClass::Oscillate => (mid, [ax / 2.0, 0.0, 0.0]),
        ActionClass::Static => (mid, [0.0; 3]),
    };
    let body = Body {
        center: [mid[0], mid[1], mid[2] + BODY_GAP_MM],
        half: [u(300.0, 340.0), u(400.0, 440.0)],
    };
    Trajectory {
        start,
        travel,
        radius,
        oscillate: spec.class == ActionClass::Oscillate,
        body,
    }
}

impl Trajectory {
    fn center(&self, s: f64) -> [f64; 3] {
        let k = if self.oscillate {
            (2.0 * std::f64::consts::PI * s).sin()
        } else {
            s
        };
        [
            self.start[0] + k * self.travel[0],
            self.start[1] + k * self.travel[1],
            self.start[2] + k * self.travel[2],
        ]
    }
}

/// Depth along the pixel ray to the near sphere surface, if hit.
fn ray_sphere(dir: [f64; 3], c: [f64; 3], r: f64) -> Option<f64> {
    let dd = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
    let dc = dir[0] * c[0] + dir[1] * c[1] + dir[2] * c[2];
    let cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
    let disc = dc * dc - dd * (cc - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = (dc - disc.sqrt()) / dd;
    (t > 0.0).then_some(t)
}

/// Renders the clip. Frames are bit-identical for equal specs.
pub fn generate(spec: &SynthSpec) -> Result<SynthClip> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let traj = trajectory(spec, &mut rng);
    let k = spec.intrinsics();
    let wall = traj.body.center[2] + WALL_GAP_MM;
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("positive sigma"));
    let (w, h) = (spec.width, spec.height);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut boxes = BBoxTrack::new();
    for t in 0..spec.frames {
        let c = traj.center(t as f64 / (spec.frames - 1) as f64);
        let mut data = Vec::with_capacity((w * h) as usize);
        let (mut u0, mut v0, mut u1, mut v1) = (u32::MAX, u32::MAX, 0, 0);
        for v in 0..h {
            for u in 0..w {
                let dir = [(u as f64 - k.cx) / k.fx, -(v as f64 - k.cy) / k.fy, 1.0];
                let hit = match (ray_sphere(dir, c, traj.radius), traj.body.hit(dir)) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
                let depth = match hit {
                    Some(z) => {
                        if u == 0 || v == 0 || u + 1 == w || v + 1 == h {
                            return Err(Error::OutOfView);
                        }
                        (u0, v0, u1, v1) = (u0.min(u), v0.min(v), u1.max(u), v1.max(v));
                        z
                    }
                    None => wall,
                };
                let noisy = match &noise {
                    Some(n) => depth + n.sample(&mut rng),
                    None => depth,
                };
                data.push(noisy.round().clamp(1.0, u16::MAX as f64) as u16);
            }
        }
        if u0 == u32::MAX {
            return Err(Error::OutOfView);
        }
        boxes.insert(
            t,
            BBox {
                x: u0,
                y: v0,
                w: u1 - u0 + 1,
                h: v1 - v0 + 1,
            },
        );
        frames.push(DepthFrame::new(w, h, data, t)?);
    }
    Ok(SynthClip { frames, boxes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetEntry {
    pub spec: SynthSpec,
    pub split: Split,
}

/// Template for every clip of a dataset; class and seed are filled per entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub base_seed: u64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub radius: f64,
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_per_class: 40,
            test_per_class: 16,
            base_seed: 0,
            frames: 24,
            width: 160,
            height: 120,
            radius: 250.0,
            noise: 1.0,
        }
    }
}

/// Test seeds live in the upper half of the seed space, train seeds in the
/// lower half.
const TEST_SEED_OFFSET: u64 = 1 << 63;

/// Balanced clip list, train entries first, classes interleaved.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<Vec<DatasetEntry>> {
    if cfg.train_per_class < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training clips per class, got {}",
            cfg.train_per_class
        )));
    }
    let n_classes = ActionClass::ALL.len() as u64;
    let mut out = Vec::new();
    for (split, per_class, offset) in [
        (Split::Train, cfg.train_per_class, 0),
        (Split::Test, cfg.test_per_class, TEST_SEED_OFFSET),
    ] {
        for i in 0..per_class {
            for class in ActionClass::ALL {
                let seed = (cfg.base_seed.wrapping_add((i as u64) * n_classes + class.id() as u64)) & !TEST_SEED_OFFSET;
                let spec = SynthSpec {
                    class,
                    frames: cfg.frames,
                    width: cfg.width,
                    height: cfg.height,
                    radius: cfg.radius,
                    noise: cfg.noise,
                    seed: seed | offset,
                    vary: true,
                };
                spec.validate()?;
                out.push(DatasetEntry { spec, split });
            }
        }
    }
    Ok(out)
}

/// Writes `<split>_<class>_<seed>` clips (a `.d16` file or a PNG directory)
/// with `.bbox` companions and a `manifest.csv` of `path,class_id,split`
/// lines. Returns the manifest path.
pub fn write_dataset(dir: &Path, entries: &[DatasetEntry], format: DepthFormat) -> Result<PathBuf> {
    use rayon::prelude::*;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let lines = entries
        .par_iter()
        .map(|e| {
            let clip = generate(&e.spec)?;
            let stem = format!("{}_{}_{:020}", e.split.as_str(), e.spec.class.id(), e.spec.seed);
            let name = match format {
                DepthFormat::D16 => format!("{stem}.d16"),
                DepthFormat::PngDir => stem,
            };
            let path = dir.join(&name);
            match format {
                DepthFormat::D16 => write_d16(&path, &clip.frames)?,
                DepthFormat::PngDir => write_png_dir(&path, &clip.frames)?,
            }
            let boxes = path.with_extension("bbox");
            std::fs::write(&boxes, clip.boxes.to_text()).map_err(|err| Error::io(&boxes, err))?;
            Ok(format!("{name},{},{}\n", e.spec.class.id(), e.split.as_str()))
        })
        .collect::<Result<Vec<String>>>()?;
    let manifest = dir.join("manifest.csv");
    std::fs::write(&manifest, lines.concat()).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_id: usize,
    pub split: Split,
}

/// Parses `path,class_id,split` lines; relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse(format!("manifest line {}: `{line}`", n + 1));
        let mut parts = line.rsplitn(3, ',');
        let split = parts.next().ok_or_else(bad)?.trim().parse()?;
        let class_id = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let path = PathBuf::from(parts.next().ok_or_else(bad)?.trim());
        out.push(ManifestEntry {
            path: if path.is_absolute() { path } else { base.join(path) },
            class_id,
            split,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn centroid_u(f: &DepthFrame, wall: u16) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for v in 0..f.height {
            for u in 0..f.width {
                if f.get(u, v) < wall {
                    s += u as f64;
                    n += 1.0;
                }
            }
        }
        s / n
    }

    #[test]
    fn static_frames_are_identical_without_noise() {
        let clip = generate(&SynthSpec::new(ActionClass::Static, 3)).unwrap();
        assert_eq!(clip.frames.len(), 24);
        assert!(clip.frames.iter().all(|f| f.data == clip.frames[0].data));
        let mut noisy = SynthSpec::new(ActionClass::Static, 3);
        noisy.noise = 2.0;
        let clip = generate(&noisy).unwrap();
        let diff = clip.frames[0]
            .data
            .iter()
            .zip(&clip.frames[1].data)
            .map(|(a, b)| (*a as i32 - *b as i32).abs())
            .max()
            .unwrap();
        assert!(diff > 0 && diff < 30);
    }

    #[test]
    fn translate_x_moves_right() {
        let spec = SynthSpec::new(ActionClass::TranslatePosX, 0);
        let clip = generate(&spec).unwrap();
        let body = (NEAR_MM + FAR_MM) / 2.0 + BODY_GAP_MM;
        let us: Vec<f64> = clip.frames.iter().map(|f| centroid_u(f, body as u16)).collect();
        assert!(us.windows(2).all(|w| w[1] > w[0]), "{us:?}");
    }

    #[test]
    fn body_and_wall_are_visible() {
        let clip = generate(&SynthSpec::new(ActionClass::TranslateNear, 0)).unwrap();
        let body = ((NEAR_MM + FAR_MM) / 2.0 + BODY_GAP_MM) as u16;
        for f in &clip.frames {
            assert_eq!(f.get(0, 0), body + WALL_GAP_MM as u16);
            assert!(f.data.iter().filter(|&&d| d == body).count() > 1000);
        }
    }

    #[test]
    fn same_seed_same_frames() {
        for class in ActionClass::ALL {
            let mut spec = SynthSpec::new(class, 42);
            spec.noise = 1.5;
            spec.vary = true;
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
    }

    #[test]
    fn every_class_stays_in_view() {
        for seed in 0..6 {
            for class in ActionClass::ALL {
                let mut spec = SynthSpec::new(class, seed);
                spec.vary = true;
                let clip = generate(&spec).unwrap();
                for (t, f) in clip.frames.iter().enumerate() {
                    clip.boxes.get(t).unwrap().check_within(f.width, f.height).unwrap();
                }
            }
        }
    }

    #[test]
    fn leaving_the_frustum_is_an_error() {
        let mut spec = SynthSpec::new(ActionClass::TranslatePosX, 0);
        spec.radius = 900.0;
        assert!(matches!(generate(&spec), Err(Error::OutOfView)));
        spec.radius = 250.0;
        spec.frames = 4;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn dataset_is_balanced_with_disjoint_seeds() {
        let cfg = DatasetConfig {
            train_per_class: 8,
            test_per_class: 2,
            ..DatasetConfig::default()
        };
        let entries = make_dataset(&cfg).unwrap();
        assert_eq!(entries.len(), 80);
        for class in ActionClass::ALL {
            for split in [Split::Train, Split::Test] {
                let n = entries
                    .iter()
                    .filter(|e| e.spec.class == class && e.split == split)
                    .count();
                assert_eq!(n, if split == Split::Train { 8 } else { 2 });
            }
        }
        let seeds =
            |s: Split| -> HashSet<u64> { entries.iter().filter(|e| e.split == s).map(|e| e.spec.seed).collect() };
        assert!(seeds(Split::Train).is_disjoint(&seeds(Split::Test)));
        assert_eq!(seeds(Split::Train).len(), 64);
        let ten = DatasetConfig {
            train_per_class: 10,
            test_per_class: 0,
            ..cfg
        };
        assert_eq!(make_dataset(&ten).unwrap().len(), 80);
        assert!(make_dataset(&DatasetConfig {
            train_per_class: 1,
            ..cfg
        })
        .is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            train_per_class: 2,
            test_per_class: 1,
            frames: 8,
            ..DatasetConfig::default()
        };
        let entries = make_dataset(&cfg).unwrap();
        let manifest = write_dataset(dir.path(), &entries, DepthFormat::D16).unwrap();
        let parsed = load_manifest(&manifest).unwrap();
        assert_eq!(parsed.len(), 24);
        for (m, e) in parsed.iter().zip(&entries) {
            assert_eq!(m.class_id, e.spec.class.id());
            assert_eq!(m.split, e.split);
            assert!(m.path.exists());
            assert!(m.path.with_extension("bbox").exists());
        }
        assert!(parse_manifest("a.d16,x,train", Path::new(".")).is_err());
        assert!(parse_manifest("a.d16,1,val", Path::new(".")).is_err());
    }
}

//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting. Tests hold a shared lock so the timing
//! checks never compete with training for the CPU.

use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dv3_core::depth_io::DepthFormat;
use dv3_core::geom::{ball_query, dist2, farthest_point_sample, Point3};
use dv3_core::net::gradcheck::check_gradients;
use dv3_core::net::{
    encode_model, evaluate, train, Arch, AugmentRanges, MultiStreamModel, Sample, StreamInputs, TrainConfig,
};
use dv3_core::pipeline::{extract, PipelineConfig};
use dv3_core::pointset::{decode_pointset, encode_pointset, read_pointset, DvPointSet};
use dv3_core::rankpool::{approx_coeffs, pool_approx, pool_exact, PoolingMode, RankPoolConfig};
use dv3_core::stats::{median, spearman};
use dv3_core::synth::{generate, make_dataset, write_dataset, ActionClass, DatasetConfig, Split, SynthSpec};
use dv3_core::voxel::{GridSpec, VoxelGrid, VoxelIndex};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} {verdict}: {name} ({detail})");
}

#[test]
fn c1_coefficient_identity() {
    let _g = serial();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut signs = true;
    for t in 2..=128 {
        let c = approx_coeffs(t);
        assert_eq!(c.len(), t);
        worst = worst.max(c.iter().sum::<f64>().abs());
        signs &= c[0] < 0.0 && c[t - 1] > 0.0;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && signs && elapsed < Duration::from_secs(1);
    report(
        1,
        "approximate pooling coefficients",
        pass,
        format!("max |sum| {worst:.2e}, end signs ok {signs}, {elapsed:.2?}"),
    );
    assert!(pass);
}

/// Voxels switch on for one random interval each, so occupancy drifts over time.
fn random_sequence(rng: &mut ChaCha8Rng, frames: usize, voxels: usize) -> Vec<VoxelGrid> {
    let spec = GridSpec::new([0.0; 3], [20, 20, 20], 35.0).unwrap();
    let mut cells: Vec<VoxelIndex> = Vec::with_capacity(voxels);
    while cells.len() < voxels {
        let c = [
            rng.random_range(0..20),
            rng.random_range(0..20),
            rng.random_range(0..20),
        ];
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let spans: Vec<(usize, usize)> = cells
        .iter()
        .map(|_| {
            let a = rng.random_range(0..frames);
            let b = rng.random_range(a + 1..=frames);
            (a, b)
        })
        .collect();
    (0..frames)
        .map(|t| {
            let on = cells
                .iter()
                .zip(&spans)
                .filter(|(_, &(a, b))| a <= t && t < b)
                .map(|(c, _)| *c)
                .collect();
            VoxelGrid::from_indices(spec, on).unwrap()
        })
        .collect()
}

#[test]
fn c2_exact_and_approximate_pooling_agree() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = RankPoolConfig::default();
    let mut rhos = Vec::new();
    for _ in 0..50 {
        let grids = random_sequence(&mut rng, 16, 200);
        let approx = pool_approx(&grids).unwrap();
        let exact = pool_exact(&grids, &cfg).unwrap().grid;
        let keys: Vec<&VoxelIndex> = exact.motion.keys().collect();
        let a: Vec<f64> = keys.iter().map(|k| approx.get(k).unwrap_or(0.0)).collect();
        let e: Vec<f64> = keys.iter().map(|k| exact.motion[*k]).collect();
        rhos.push(spearman(&a, &e));
    }
    let med = median(&rhos);
    let elapsed = start.elapsed();
    let pass = med >= 0.8 && elapsed < Duration::from_secs(30);
    report(
        2,
        "exact vs approximate rank pooling",
        pass,
        format!("median Spearman {med:.4} over 50 sequences, {elapsed:.2?}"),
    );
    assert!(pass);
}

/// Recomputes every candidate's distance to the whole selected set each step.
fn fps_oracle(points: &[Point3], k: usize, start: usize) -> Vec<usize> {
    let mut selected = vec![start];
    while selected.len() < k {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..points.len() {
            if selected.contains(&i) {
                continue;
            }
            let d = selected
                .iter()
                .map(|&s| dist2(&points[i], &points[s]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        selected.push(best.unwrap());
    }
    selected
}

fn ball_oracle(points: &[Point3], center: &Point3, radius: f64, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + (p[2] - center[2]).powi(2)).sqrt();
        if d <= radius && out.len() < k {
            out.push(i);
        }
    }
    out
}

#[test]
fn c3_geometric_oracles() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=256);
        let mut points: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ]
            })
            .collect();
        // Snap some points to a coarse lattice so ties and duplicates occur.
        for p in points.iter_mut().take(n / 4) {
            for c in p.iter_mut() {
                *c = (*c * 4.0).round() / 4.0;
            }
        }
        let k = rng.random_range(1..=n);
        let s = rng.random_range(0..n);
        if farthest_point_sample(&points, k, s).unwrap() != fps_oracle(&points, k, s) {
            mismatches += 1;
        }
        let center = points[rng.random_range(0..n)];
        let radius = rng.random_range(0.05..0.6);
        let kk = rng.random_range(1..=64);
        if ball_query(&points, &center, radius, kk) != ball_oracle(&points, &center, radius, kk) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(10);
    report(
        3,
        "farthest point sampling and ball query oracles",
        pass,
        format!("{mismatches} mismatches over 200 instances, {elapsed:.2?}"),
    );
    assert!(pass);
}

fn blob(rng: &mut ChaCha8Rng, n: usize, channels: usize) -> DvPointSet {
    let coords = (0..n)
        .map(|_| {
            [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.3..0.3),
            ]
        })
        .collect();
    let motion = (0..n * channels).map(|_| rng.random_range(-0.5..0.5)).collect();
    DvPointSet::new(coords, motion, channels).unwrap()
}

#[test]
fn c4_gradient_check() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = MultiStreamModel::<f64>::init(Arch::tiny(3, 3, 2), 4).unwrap();
    // Freshly initialised biases are zero, which places rows with zero
    // relative offset exactly on a ReLU kink. Check at a generic point.
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let batch: Vec<_> = (0..3)
        .map(|label| {
            let inputs = StreamInputs {
                motion: Some(blob(&mut rng, 28, 3)),
                appearance: vec![blob(&mut rng, 22, 0), blob(&mut rng, 30, 0)],
            };
            (model.prepare(&inputs, label as u64).unwrap(), label)
        })
        .collect();
    let r = check_gradients(&model, &batch, 1e-4).unwrap();
    let groups: std::collections::BTreeSet<&str> =
        r.tensors.iter().map(|t| t.name.split('.').next().unwrap()).collect();
    let worst = r.max_rel_error();
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4
        && r.tensors.len() == model.tensors().len()
        && groups.len() == 3
        && elapsed < Duration::from_secs(30);
    report(
        4,
        "gradient check on the tiny model",
        pass,
        format!(
            "max rel error {worst:.2e} over {} tensors in {groups:?}, {elapsed:.2?}",
            r.tensors.len()
        ),
    );
    assert!(pass);
}

/// Streams a model consumes.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Streams {
    Multi,
    Motion,
    Appearance,
    /// Motion stream coordinates with the leading `n` motion channels.
    MotionChannels(usize),
}

struct Dataset {
    train: Vec<Sample>,
    test: Vec<Sample>,
}

fn build_dataset(cfg: &DatasetConfig, pipeline: &PipelineConfig) -> Dataset {
    let entries = make_dataset(cfg).unwrap();
    let data: Vec<(Sample, Split)> = entries
        .par_iter()
        .map(|e| {
            let clip = generate(&e.spec).unwrap();
            let x = extract(&clip.frames, &clip.boxes, &e.spec.intrinsics(), pipeline).unwrap();
            let inputs = StreamInputs {
                motion: Some(x.motion),
                appearance: x.appearance,
            };
            (
                Sample {
                    inputs,
                    label: e.spec.class.id(),
                },
                e.split,
            )
        })
        .collect();
    let (train, test): (Vec<_>, Vec<_>) = data.into_iter().partition(|(_, s)| *s == Split::Train);
    Dataset {
        train: train.into_iter().map(|(x, _)| x).collect(),
        test: test.into_iter().map(|(x, _)| x).collect(),
    }
}

fn restrict(s: &Sample, streams: Streams) -> Sample {
    let mut s = s.clone();
    match streams {
        Streams::Multi => {}
        Streams::Motion => s.inputs.appearance.clear(),
        Streams::Appearance => s.inputs.motion = None,
        Streams::MotionChannels(n) => {
            s.inputs.appearance.clear();
            s.inputs.motion = s.inputs.motion.map(|m| m.with_channels(n));
        }
    }
    s
}

/// Trains a desk-scale model on the chosen streams; returns the trained model
/// and its test accuracy.
fn fit(data: &Dataset, streams: Streams, n_sample: usize, tc: &TrainConfig) -> (MultiStreamModel<f32>, f64) {
    let train_set: Vec<Sample> = data.train.iter().map(|s| restrict(s, streams)).collect();
    let test_set: Vec<Sample> = data.test.iter().map(|s| restrict(s, streams)).collect();
    let first = &train_set[0].inputs;
    let mut arch = Arch::desk(
        ActionClass::ALL.len(),
        first.motion.as_ref().map_or(0, |m| m.channels),
        first.appearance.len(),
    );
    arch.use_motion = first.motion.is_some();
    arch.n_sample = n_sample;
    let mut model = MultiStreamModel::<f32>::init(arch, tc.seed).unwrap();
    train(&mut model, &train_set, tc, |_| {}).unwrap();
    let acc = evaluate(&model, &test_set).unwrap().accuracy;
    (model, acc)
}

#[test]
fn c5_end_to_end_recognition() {
    let _g = serial();
    let start = Instant::now();
    let cfg = DatasetConfig {
        train_per_class: 40,
        test_per_class: 16,
        base_seed: 500,
        ..DatasetConfig::default()
    };
    let data = build_dataset(&cfg, &PipelineConfig::default());
    let tc = TrainConfig {
        epochs: C5_EPOCHS,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let (_, acc) = fit(&data, Streams::Multi, 512, &tc);
    let elapsed = start.elapsed();

    let short = TrainConfig { epochs: 1, ..tc };
    let a = encode_model(&fit(&data, Streams::Multi, 512, &short).0);
    let b = encode_model(&fit(&data, Streams::Multi, 512, &short).0);
    let deterministic = a == b;

    let pass = acc >= 0.9 && elapsed <= Duration::from_secs(600) && deterministic;
    report(
        5,
        "end-to-end synthetic recognition",
        pass,
        format!(
            "test accuracy {acc:.4} on {} clips, {elapsed:.1?} for extraction and training, repeat run identical {deterministic}",
            data.test.len()
        ),
    );
    assert!(pass);
}

const C5_EPOCHS: usize = 30;

#[test]
fn c6_ablation_trends() {
    let _g = serial();
    let start = Instant::now();
    let seeds = [0u64, 1, 2];
    let mut acc = std::collections::BTreeMap::<&str, f64>::new();
    for &seed in &seeds {
        let cfg = DatasetConfig {
            train_per_class: ABLATION_TRAIN_PER_CLASS,
            test_per_class: 16,
            base_seed: 6000 + seed * 1000,
            noise: ABLATION_NOISE,
            ..DatasetConfig::default()
        };
        let tc = TrainConfig {
            epochs: ABLATION_EPOCHS,
            batch_size: 8,
            seed,
            augment: AugmentRanges {
                rot_y_deg: 0.0,
                rot_x_deg: 0.0,
                ..AugmentRanges::default()
            },
            ..TrainConfig::default()
        };
        let four = build_dataset(&cfg, &PipelineConfig::default());
        let one = build_dataset(
            &cfg,
            &PipelineConfig {
                t1: 1,
                ..PipelineConfig::default()
            },
        );
        let runs: [(&str, &Dataset, Streams); 6] = [
            ("xyz", &four, Streams::MotionChannels(0)),
            ("xyz+mG", &four, Streams::MotionChannels(1)),
            ("motion T1=4", &four, Streams::Motion),
            ("motion T1=1", &one, Streams::Motion),
            ("appearance", &four, Streams::Appearance),
            ("multi", &four, Streams::Multi),
        ];
        for (name, data, streams) in runs {
            let (_, a) = fit(data, streams, ABLATION_POINTS, &tc);
            println!("  seed {seed} {name}: {a:.4}");
            *acc.entry(name).or_default() += a / seeds.len() as f64;
        }
    }
    let checks = [
        ("(a) xyz+mG >= xyz", acc["xyz+mG"] - acc["xyz"]),
        ("(b) T1=4 >= T1=1", acc["motion T1=4"] - acc["motion T1=1"]),
        ("(c) multi >= motion", acc["multi"] - acc["motion T1=4"]),
        ("(c) motion >= appearance", acc["motion T1=4"] - acc["appearance"]),
    ];
    let pass = checks.iter().all(|(_, margin)| *margin >= 0.0);
    let means: Vec<String> = acc.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
    let margins: Vec<String> = checks.iter().map(|(k, m)| format!("{k} margin {m:+.4}")).collect();
    report(
        6,
        "ablation trends over 3 seeds",
        pass,
        format!("{}; {}; {:.1?}", means.join(", "), margins.join(", "), start.elapsed()),
    );
    assert!(pass);
}

const ABLATION_TRAIN_PER_CLASS: usize = 16;
const ABLATION_EPOCHS: usize = 30;
const ABLATION_POINTS: usize = 256;
const ABLATION_NOISE: f64 = 0.0;

#[test]
fn c7_voxelization_and_pooling_speed() {
    let _g = serial();
    let mut spec = SynthSpec::new(ActionClass::TranslatePosX, 7);
    spec.frames = 100;
    spec.width = 320;
    spec.height = 240;
    spec.noise = 1.0;
    let clip = generate(&spec).unwrap();
    let k = spec.intrinsics();
    let approx_cfg = PipelineConfig::default();
    let exact_cfg = PipelineConfig {
        pooling: PoolingMode::Exact,
        ..PipelineConfig::default()
    };
    let approx = extract(&clip.frames, &clip.boxes, &k, &approx_cfg).unwrap();
    let exact = extract(&clip.frames, &clip.boxes, &k, &exact_cfg).unwrap();
    let vox = approx.timings.voxelization_ms.max(exact.timings.voxelization_ms);
    let ratio = exact.timings.rank_pooling_ms / approx.timings.rank_pooling_ms;
    let pass = vox <= 2107.0 && ratio >= 5.0;
    report(
        7,
        "voxelization time and pooling speed-up",
        pass,
        format!(
            "voxelization {vox:.1} ms for 100 frames at 320x240, pooling approx {:.1} ms vs exact {:.1} ms ({ratio:.1}x)",
            approx.timings.rank_pooling_ms, exact.timings.rank_pooling_ms
        ),
    );
    assert!(pass);
}

#[test]
fn c8_deterministic_extract_and_lossless_format() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        train_per_class: 2,
        test_per_class: 0,
        ..DatasetConfig::default()
    };
    let entries: Vec<_> = make_dataset(&cfg).unwrap().into_iter().step_by(3).collect();
    write_dataset(dir.path(), &entries, DepthFormat::D16).unwrap();
    let mut inputs: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "d16"))
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    inputs.sort();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_dv3"))
            .args(["extract", "--seed", "8", "--out"])
            .arg(&out)
            .args(&inputs)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut files = 0;
    let mut identical = true;
    let mut lossless = true;
    for entry in std::fs::read_dir(&a).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        let bytes = std::fs::read(&path).unwrap();
        identical &= bytes == std::fs::read(b.join(name)).unwrap();
        let set = read_pointset(&path).unwrap();
        lossless &= encode_pointset(&set) == bytes && decode_pointset(&bytes).unwrap() == set;
        files += 1;
    }
    let pass = files == inputs.len() * 4 && identical && lossless;
    report(
        8,
        "deterministic extraction and lossless point set files",
        pass,
        format!("{files} files, byte-identical {identical}, round trip lossless {lossless}"),
    );
    assert!(pass);
}

#[test]
fn c9_static_scene_is_empty() {
    let _g = serial();
    let spec = SynthSpec::new(ActionClass::Static, 9);
    let clip = generate(&spec).unwrap();
    let mut sizes = Vec::new();
    for pooling in [PoolingMode::Approx, PoolingMode::Exact] {
        let cfg = PipelineConfig {
            pooling,
            ..PipelineConfig::default()
        };
        let x = extract(&clip.frames, &clip.boxes, &spec.intrinsics(), &cfg).unwrap();
        sizes.push(x.motion.len());
    }
    let pass = sizes.iter().all(|&n| n == 0);
    report(
        9,
        "static zero-noise clip yields an empty motion set",
        pass,
        format!("motion points approx {} exact {}", sizes[0], sizes[1]),
    );
    assert!(pass);
}

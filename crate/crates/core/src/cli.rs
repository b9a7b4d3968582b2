//! `dv3` command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::depth_io::DepthFormat;
use crate::net::{evaluate, load_model, save_model, train, Arch, MultiStreamModel, Sample, StreamInputs, TrainConfig};
use crate::pipeline::{extract_path, Extracted, PipelineConfig};
use crate::pointset::{read_pointset, write_ply, write_pointset, DvPointSet};
use crate::rankpool::PoolingMode;
use crate::synth::{load_manifest, make_dataset, write_dataset, ActionClass, DatasetConfig, ManifestEntry, Split};

#[derive(Debug, Parser)]
#[command(
    name = "dv3",
    version,
    about = "3D dynamic voxel extraction and point-set action recognition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// `key = value` pipeline configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert depth clips to motion and appearance point sets.
    Extract(ExtractArgs),
    /// Render a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Train a classifier from a manifest.
    Train(TrainArgs),
    /// Report accuracy and confusion counts of a checkpoint.
    Eval(EvalArgs),
    /// Convert a point-set file to ASCII PLY.
    ExportPly(ExportArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct PipelineFlags {
    #[arg(long)]
    pub pooling: Option<PoolingMode>,
    /// Temporal splits T1.
    #[arg(long)]
    pub splits: Option<usize>,
    /// Appearance frames T2.
    #[arg(long)]
    pub appearance_frames: Option<usize>,
    /// Voxel edge in mm.
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Points sampled per stream.
    #[arg(long)]
    pub points: Option<usize>,
    /// Rank-pooling regularization for exact pooling.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Skip the depth-threshold action proposal.
    #[arg(long)]
    pub no_proposal: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Depth clips: `.d16` files or directories of 16-bit PNGs.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Person boxes (`frame x y w h` lines); only valid with one input.
    #[arg(long)]
    pub bbox_file: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    /// Depth noise standard deviation in mm.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value = "d16")]
    pub format: DepthFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchSize {
    Full,
    Desk,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Streams {
    /// Motion and appearance streams.
    Multi,
    Motion,
    Appearance,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-epoch `epoch,loss,accuracy` lines.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ArchSize::Desk)]
    pub arch: ArchSize,
    #[arg(long, value_enum, default_value_t = Streams::Multi)]
    pub streams: Streams,
    /// Motion channels fed to the network (default: all).
    #[arg(long)]
    pub motion_channels: Option<usize>,
    #[arg(long, default_value_t = 70)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Number of classes (default: largest class id + 1).
    #[arg(long)]
    pub classes: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest split to evaluate.
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub input: PathBuf,
    pub output: PathBuf,
}

/// Config file then flags. The flag is true when the sample count was set
/// explicitly rather than left at its default.
fn pipeline_config(config: Option<&Path>, flags: &PipelineFlags) -> anyhow::Result<(PipelineConfig, bool)> {
    let mut cfg = PipelineConfig::default();
    let mut points_set = flags.points.is_some();
    if let Some(path) = config {
        let kv = KeyValues::load(path)?;
        points_set |= kv.get("points").is_some();
        cfg.apply(&kv, path.parent().unwrap_or(Path::new(".")))
            .with_context(|| format!("config {}", path.display()))?;
    }
    if let Some(v) = flags.pooling {
        cfg.pooling = v;
    }
    if let Some(v) = flags.splits {
        cfg.t1 = v;
    }
    if let Some(v) = flags.appearance_frames {
        cfg.t2 = v;
    }
    if let Some(v) = flags.voxel_size {
        cfg.voxel_size = v;
    }
    if let Some(v) = flags.points {
        cfg.points = v;
    }
    if let Some(v) = flags.lambda {
        cfg.rank.lambda = v;
    }
    if let Some(v) = &flags.intrinsics {
        cfg.intrinsics = Some(v.clone());
    }
    if flags.no_proposal {
        cfg.proposal = false;
    }
    cfg.validate()?;
    Ok((cfg, points_set))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into())
}

/// Motion set path and the `t2` appearance set paths written for a clip.
pub fn output_paths(out: &Path, input: &Path, t2: usize) -> (PathBuf, Vec<PathBuf>) {
    let s = stem(input);
    let motion = out.join(format!("{s}.dv3p"));
    let appearance = (0..t2).map(|i| out.join(format!("{s}.app{i}.dv3p"))).collect();
    (motion, appearance)
}

fn write_extracted(out: &Path, input: &Path, x: &Extracted) -> crate::Result<()> {
    let (motion, appearance) = output_paths(out, input, x.appearance.len());
    write_pointset(&motion, &x.motion)?;
    for (p, a) in appearance.iter().zip(&x.appearance) {
        write_pointset(p, a)?;
    }
    Ok(())
}

fn cmd_extract(cli: &Cli, args: &ExtractArgs) -> anyhow::Result<()> {
    let (cfg, _) = pipeline_config(cli.config.as_deref(), &args.pipeline)?;
    if args.bbox_file.is_some() && args.inputs.len() != 1 {
        bail!("--bbox-file needs exactly one input");
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let results: Vec<anyhow::Result<String>> = args
        .inputs
        .par_iter()
        .map(|input| {
            let x =
                extract_path(input, args.bbox_file.as_deref(), &cfg).with_context(|| format!("{}", input.display()))?;
            write_extracted(&args.out, input, &x)?;
            Ok(format!(
                "{}: {} motion points, {} channels\n{}",
                input.display(),
                x.motion.len(),
                x.motion.channels,
                x.timings.report()
            ))
        })
        .collect();
    let mut stdout = std::io::stdout().lock();
    for r in results {
        write!(stdout, "{}", r?)?;
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = DatasetConfig {
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        base_seed: cli.seed,
        frames: args.frames,
        noise: args.noise,
        ..DatasetConfig::default()
    };
    let entries = make_dataset(&cfg)?;
    let manifest = write_dataset(&args.out, &entries, args.format)?;
    println!("{} clips, manifest {}", entries.len(), manifest.display());
    Ok(())
}

/// Loads the samples of one split. `.dv3p` entries are read with their
/// `.app<i>.dv3p` companions; other entries are extracted on the fly.
pub fn load_samples(entries: &[ManifestEntry], split: Split, cfg: &PipelineConfig) -> anyhow::Result<Vec<Sample>> {
    entries
        .par_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let inputs = if e.path.extension().is_some_and(|x| x == "dv3p") {
                let dir = e.path.parent().unwrap_or(Path::new("."));
                let (_, app) = output_paths(dir, &e.path, cfg.t2);
                StreamInputs {
                    motion: Some(read_pointset(&e.path)?),
                    appearance: app.iter().map(|p| read_pointset(p)).collect::<crate::Result<_>>()?,
                }
            } else {
                let x = extract_path(&e.path, None, cfg).with_context(|| format!("{}", e.path.display()))?;
                StreamInputs {
                    motion: Some(x.motion),
                    appearance: x.appearance,
                }
            };
            Ok(Sample {
                inputs,
                label: e.class_id,
            })
        })
        .collect()
}

/// Drops or trims streams to what `arch` consumes.
pub fn adapt_inputs(inputs: &StreamInputs, arch: &Arch) -> anyhow::Result<StreamInputs> {
    let motion = match (&inputs.motion, arch.use_motion) {
        (Some(m), true) => {
            if m.channels < arch.motion_channels {
                bail!(
                    "point set has {} motion channels, model expects {}",
                    m.channels,
                    arch.motion_channels
                );
            }
            Some(m.with_channels(arch.motion_channels))
        }
        (None, true) => bail!("missing motion stream"),
        (_, false) => None,
    };
    let appearance: Vec<DvPointSet> = if arch.appearance_streams == 0 {
        Vec::new()
    } else {
        inputs.appearance.clone()
    };
    Ok(StreamInputs { motion, appearance })
}

fn class_count(entries: &[ManifestEntry]) -> usize {
    entries.iter().map(|e| e.class_id + 1).max().unwrap_or(0)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> anyhow::Result<()> {
    let (cfg, points_set) = pipeline_config(cli.config.as_deref(), &args.pipeline)?;
    let entries = load_manifest(&args.manifest)?;
    let n_classes = args.classes.unwrap_or_else(|| class_count(&entries));
    let samples = load_samples(&entries, Split::Train, &cfg)?;
    let Some(first) = samples.first() else {
        bail!("manifest {} has no training entries", args.manifest.display());
    };
    let channels = first.inputs.motion.as_ref().map_or(0, |m| m.channels);
    let motion_channels = args.motion_channels.unwrap_or(channels);
    let streams = first.inputs.appearance.len();
    let (use_motion, appearance_streams) = match args.streams {
        Streams::Multi => (true, streams),
        Streams::Motion => (true, 0),
        Streams::Appearance => (false, streams),
    };
    let mut arch = match args.arch {
        ArchSize::Full => Arch::full(n_classes, motion_channels, appearance_streams),
        ArchSize::Desk => Arch::desk(n_classes, motion_channels, appearance_streams),
        ArchSize::Tiny => Arch::tiny(n_classes, motion_channels, appearance_streams),
    };
    arch.use_motion = use_motion;
    if points_set {
        arch.n_sample = cfg.points;
    }
    let samples = samples
        .iter()
        .map(|s| {
            Ok(Sample {
                inputs: adapt_inputs(&s.inputs, &arch)?,
                label: s.label,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut model = MultiStreamModel::<f32>::init(arch, cli.seed)?;
    let tcfg = TrainConfig {
        batch_size: args.batch_size,
        lr: args.lr,
        epochs: args.epochs,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    let mut metrics = match &args.metrics {
        Some(p) => Some(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => None,
    };
    let mut write_err = None;
    train(&mut model, &samples, &tcfg, |m| {
        println!("{}", m.to_line());
        if let Some(f) = metrics.as_mut() {
            if let Err(e) = writeln!(f, "{}", m.to_line()) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing metrics");
    }
    save_model(&args.out, &model)?;
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> anyhow::Result<()> {
    let (cfg, _) = pipeline_config(cli.config.as_deref(), &args.pipeline)?;
    let model: MultiStreamModel<f32> = load_model(&args.model)?;
    let entries = load_manifest(&args.manifest)?;
    let classes = class_count(&entries);
    if classes != model.n_classes() {
        bail!(
            "class count mismatch: manifest has {classes} classes, checkpoint {}",
            model.n_classes()
        );
    }
    let samples = load_samples(&entries, args.split, &cfg)?
        .iter()
        .map(|s| {
            Ok(Sample {
                inputs: adapt_inputs(&s.inputs, &model.arch)?,
                label: s.label,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = evaluate(&model, &samples)?;
    println!("accuracy {:.4} ({} samples)", report.accuracy, samples.len());
    for (c, row) in report.confusion.iter().enumerate() {
        let name = ActionClass::from_id(c).map_or_else(|_| format!("class {c}"), |a| a.name().to_string());
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        println!("{c} {name}: {}", cells.join(" "));
    }
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> anyhow::Result<()> {
    let ps = read_pointset(&args.input)?;
    write_ply(&args.output, &ps)?;
    println!("{} points", ps.len());
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::Extract(a) => cmd_extract(&cli, a),
        Command::Synth(a) => cmd_synth(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::ExportPly(a) => cmd_export(a),
    })
}

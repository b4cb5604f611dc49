//! The `fgv` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use fgv_core::binning::BinSpec;
use fgv_core::checkpoint::TrainMeta;
use fgv_core::eval::{evaluate_classifier, evaluate_localiser};
use fgv_core::image::{to_tensor, RgbImage};
use fgv_core::model::{build_model, Depth, HeadKind, Model, ModelConfig};
use fgv_core::pipeline::Pipeline;
use fgv_core::preprocess::{bin_histogram, preprocess_eval_center, view_boxes, HistogramView, PreprocessConfig};
use fgv_core::swp::{heatmap_pixels, HeatmapLayout};
use fgv_core::synth::{subset_samples, Placement, Sample, SynthConfig};
use fgv_core::train::{train_classifier, train_localiser, Control, TrainConfig};
use fgv_core::views::{View, BOX_ENLARGE};

use crate::bench::{echo_lines, measure, model_batches, model_runner, pipeline_runner, Runner, MIN_IMAGES};
use crate::config::{pick, FileConfig};
use crate::manifest::{load_samples, write_dataset};
use crate::pnm::{read_ppm, write_pgm};
use crate::report::{format_metrics, history_csv, parse_history_csv, write_histograms};
use crate::{ckpt, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Fine-grained vehicle recognition: synthetic data, residual networks with
/// spatially-weighted pooling, binned localisation and a two-stage pipeline.
#[derive(Debug, Parser)]
#[command(name = "fgv", version, max_term_width = 100)]
pub struct Cli {
    /// TOML file supplying defaults for flags [default: none]
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed; beats the config file [default: 0]
    #[arg(long, global = true, env = "FGV_SEED")]
    pub seed: Option<u64>,
    /// More logging: -v info, -vv debug [default: warnings only]
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (PPM images plus manifest)
    GenData(GenDataArgs),
    /// Train a classifier or localiser and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest
    Eval(EvalArgs),
    /// Evaluate the localise-crop-classify pipeline
    Pipeline(PipelineArgs),
    /// Measure forward throughput
    Bench(BenchArgs),
    /// Export SWP outputs as graymaps
    Heatmap(HeatmapArgs),
    /// Write bin-occupancy histograms of a manifest's boxes
    AnalyzeBins(AnalyzeBinsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    Jittered,
    BinAligned,
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    /// Number of classes, at least 2 [default: 4]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Images per class [default: 25]
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Square canvas side in pixels [default: 256]
    #[arg(long)]
    pub canvas: Option<usize>,
    /// Network input size the glyphs must fit [default: canvas * 7 / 8]
    #[arg(long)]
    pub input: Option<usize>,
    /// Glyph placement
    #[arg(long, value_enum, default_value_t = PlacementArg::Jittered)]
    pub placement: PlacementArg,
    /// Bin size for bin-aligned placement [default: 7.0]
    #[arg(long)]
    pub bin_size: Option<f64>,
    /// Split tag written to the manifest header
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Output directory
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Cls,
    Loc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ViewArg {
    /// Random rescale and crop
    Augment,
    /// Eval rescale and central crop
    Central,
    /// Ground-truth box enlarged by 10%, cropped and letterboxed
    Box,
}

impl ViewArg {
    fn parse_name(s: &str) -> Result<Self, CliError> {
        ViewArg::from_str(s, true).map_err(|_| CliError::Usage(format!("unknown view {s:?}")))
    }
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// What to train
    #[arg(long, value_enum, default_value_t = Task::Cls)]
    pub task: Task,
    /// ResNet depth: 18, 34 or 50 [default: 50]
    #[arg(long)]
    pub arch: Option<usize>,
    /// Channel width multiplier in (0, 1] [default: 1.0]
    #[arg(long)]
    pub width: Option<f64>,
    /// Square input size in pixels [default: 224]
    #[arg(long)]
    pub input: Option<usize>,
    /// Use the spatially-weighted pooling head [default: off]
    #[arg(long)]
    pub swp: bool,
    /// Localisation bin size in pixels [default: 7.0]
    #[arg(long)]
    pub bin_size: Option<f64>,
    /// Training manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Keep only these classes, relabelled in order, e.g. 0,3,5 [default: all]
    #[arg(long, value_delimiter = ',')]
    pub subset: Option<Vec<usize>>,
    /// Checkpoint to write
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Per-epoch history CSV [default: <out>.history.csv]
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Continue training this checkpoint [default: none]
    #[arg(long, conflicts_with = "init_from")]
    pub resume: Option<PathBuf>,
    /// Start from this classifier's backbone with a fresh head [default: none]
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// With --init-from, train only the head [default: off]
    #[arg(long, requires = "init_from")]
    pub freeze_backbone: bool,
    /// Epoch budget [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size, at least 2 [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// L2 weight decay on weights [default: 0.0001]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Localiser loss weights cx,cy,w,h [default: 1,1,1,1]
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub loss_weights: Option<Vec<f64>>,
    /// Input view [default: augment for cls, central for loc]
    #[arg(long, value_enum)]
    pub view: Option<ViewArg>,
    /// Box perturbation for --view box, fraction of the box [default: 0.0]
    #[arg(long)]
    pub box_jitter: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Evaluation manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Localiser input view: central or augment [default: central]
    #[arg(long, value_enum)]
    pub view: Option<ViewArg>,
    /// Inference batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct PipelineArgs {
    /// Localiser checkpoint
    #[arg(long)]
    pub loc: PathBuf,
    /// Classifier checkpoint, trained on box crops
    #[arg(long)]
    pub cls: PathBuf,
    /// Evaluation manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Crop with ground-truth boxes instead of the localiser [default: off]
    #[arg(long)]
    pub gt_boxes: bool,
    /// Inference batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// Classifier checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Also time the pipeline with this localiser [default: none]
    #[arg(long)]
    pub loc: Option<PathBuf>,
    /// Batch sizes to time
    #[arg(long, value_delimiter = ',', default_value = "1,32")]
    pub batches: Vec<usize>,
    /// Images per measurement, at least 10000
    #[arg(long, default_value_t = MIN_IMAGES)]
    pub images: usize,
    /// Distinct synthetic images cycled through
    #[arg(long, default_value_t = 64)]
    pub pool: usize,
    /// Interleaved timing rounds
    #[arg(long, default_value_t = 50)]
    pub rounds: usize,
}

#[derive(Debug, clap::Args)]
pub struct HeatmapArgs {
    /// SWP classifier checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PPM images to export
    pub inputs: Vec<PathBuf>,
    /// Take inputs from this manifest as well [default: none]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Most manifest images to export
    #[arg(long, default_value_t = 8)]
    pub limit: usize,
    /// Output directory
    #[arg(long, default_value = "heatmaps")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BinsView {
    /// Boxes as annotated
    Raw,
    /// After eval rescale and central crop
    Central,
    /// After one training augmentation draw
    Train,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeBinsArgs {
    /// Manifest to analyse
    #[arg(long)]
    pub manifest: PathBuf,
    /// Box frame to histogram
    #[arg(long, value_enum, default_value_t = BinsView::Raw)]
    pub view: BinsView,
    /// Network input size for the central and train views [default: 224]
    #[arg(long)]
    pub input: Option<usize>,
    /// Bin size in pixels [default: 7.0]
    #[arg(long)]
    pub bin_size: Option<f64>,
    /// Output directory for the four CSV files
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
    #[error("{0}")]
    Diverged(fgv_core::Error),
}

impl From<fgv_core::Error> for CliError {
    fn from(e: fgv_core::Error) -> Self {
        match e {
            fgv_core::Error::Diverged { .. } => CliError::Diverged(e),
            e => CliError::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(Error::io(Path::new("<stdout>"), e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` and runs the command, writing reports to `out`. Returns the
/// process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = out.flush();
            if matches!(e, CliError::Usage(_)) {
                eprintln!("error: {e}\n\nFor more information, try '--help'.");
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(|e| match e {
            Error::Format(m) => usage(m),
            e => CliError::Runtime(e),
        })?,
        None => FileConfig::default(),
    };
    let seed = pick(cli.seed, file.seed, 0);
    match cli.command {
        Command::GenData(a) => gen_data(a, &file, seed, out),
        Command::Train(a) => train(a, &file, seed, out),
        Command::Eval(a) => eval(a, &file, out),
        Command::Pipeline(a) => pipeline(a, &file, out),
        Command::Bench(a) => bench(a, seed, out),
        Command::Heatmap(a) => heatmap(a, out),
        Command::AnalyzeBins(a) => analyze_bins(a, &file, seed, out),
    }
}

fn gen_data(a: GenDataArgs, file: &FileConfig, seed: u64, out: &mut dyn Write) -> CliResult {
    let classes = pick(a.classes, file.data.classes, 4);
    let per_class = pick(a.per_class, file.data.per_class, 25);
    let canvas = pick(a.canvas, file.data.canvas, 256);
    if classes < 2 {
        return Err(usage(format!("--classes must be at least 2, got {classes}")));
    }
    if per_class == 0 {
        return Err(usage("--per-class must be at least 1"));
    }
    let mut cfg = SynthConfig::new(classes, per_class, canvas, seed);
    if let Some(input) = a.input.or(file.model.input) {
        cfg.frame = PreprocessConfig::for_input(input);
    }
    if a.placement == PlacementArg::BinAligned {
        cfg.placement = Placement::BinAligned {
            bin_size: pick(a.bin_size, file.model.bin_size, BinSpec::DEFAULT_BIN_SIZE),
        };
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let path = write_dataset(&a.out_dir, &cfg, &a.split)?;
    writeln!(out, "manifest: {}", path.display())?;
    writeln!(out, "classes: {classes}")?;
    writeln!(out, "images: {}", cfg.len())?;
    Ok(())
}

fn load_data(manifest: &Path, subset: Option<&[usize]>) -> CliResult<(usize, Vec<Sample>)> {
    let (m, samples) = load_samples(manifest)?;
    match subset {
        Some(ids) => {
            let (s, _) = subset_samples(&samples, ids).map_err(|e| usage(e.to_string()))?;
            Ok((ids.len(), s))
        }
        None => Ok((m.classes, samples)),
    }
}

fn view_for(view: ViewArg, input: usize, seed: u64, jitter: f64) -> View {
    let frame = PreprocessConfig {
        seed,
        ..PreprocessConfig::for_input(input)
    };
    match view {
        ViewArg::Augment => View::Augment(frame),
        ViewArg::Central => View::CentralCrop(frame),
        ViewArg::Box => View::BoxCrop {
            enlarge: BOX_ENLARGE,
            size: input,
            jitter,
        },
    }
}

fn train(a: TrainArgs, file: &FileConfig, seed: u64, out: &mut dyn Write) -> CliResult {
    let (classes, samples) = load_data(&a.manifest, a.subset.as_deref())?;
    let ft = &file.train;
    let loss_weights = match a.loss_weights.as_deref() {
        Some(&[a0, a1, a2, a3]) => Some([a0, a1, a2, a3]),
        Some(_) => return Err(usage("--loss-weights takes four values")),
        None => None,
    };
    let default_view = if a.task == Task::Loc { ViewArg::Central } else { ViewArg::Augment };
    let file_view = ft.view.as_deref().map(ViewArg::parse_name).transpose()?;
    let view_arg = pick(a.view, file_view, default_view);
    if a.task == Task::Loc && view_arg == ViewArg::Box {
        return Err(usage("the box view has nothing to localise; use central or augment"));
    }
    if a.task == Task::Loc && a.swp {
        log::warn!("SWP on the localiser is supported but it targets classification");
    }

    let (mut model, resume) = if let Some(path) = &a.resume {
        let c = ckpt::load(path)?;
        check_resume(&a, c.model.config(), file)?;
        (c.model, c.meta)
    } else if let Some(path) = &a.init_from {
        if a.task == Task::Loc {
            return Err(usage("--init-from transfers classifier heads only"));
        }
        let c = ckpt::load(path)?;
        (c.model.transfer_head(classes, a.freeze_backbone)?, TrainMeta::default())
    } else {
        let depth = Depth::from_layers(pick(a.arch, file.model.arch, 50)).map_err(|e| usage(e.to_string()))?;
        let head = match (a.task, a.swp || file.model.swp == Some(true)) {
            (Task::Cls, false) => HeadKind::Plain,
            (Task::Cls, true) => HeadKind::Swp,
            (Task::Loc, false) => HeadKind::Loc,
            (Task::Loc, true) => HeadKind::LocSwp,
        };
        let mut mc = ModelConfig::new(depth, classes)
            .with_width(pick(a.width, file.model.width, 1.0))
            .with_input(pick(a.input, file.model.input, 224))
            .with_head(head)
            .with_seed(seed);
        mc.bin_size = pick(a.bin_size, file.model.bin_size, BinSpec::DEFAULT_BIN_SIZE);
        if head.has_swp() {
            mc = mc.fit_swp().map_err(|e| usage(e.to_string()))?;
        }
        mc.validate().map_err(|e| usage(e.to_string()))?;
        (build_model::<f32>(&mc)?, TrainMeta::default())
    };

    let input = model.config().input_size;
    let cfg = TrainConfig {
        lr: pick(a.lr, ft.lr, 0.01),
        momentum: pick(a.momentum, ft.momentum, 0.9),
        weight_decay: pick(a.weight_decay, ft.weight_decay, 1e-4),
        batch_size: pick(a.batch_size, ft.batch_size, 16),
        epochs: pick(a.epochs, ft.epochs, 30),
        seed,
        loss_weights: pick(loss_weights, ft.loss_weights, [1.0; 4]),
        view: view_for(view_arg, input, seed, pick(a.box_jitter, ft.box_jitter, 0.0)),
        check_finite: true,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    let mut history = match (&a.resume, fs::read_to_string(&history_path)) {
        (Some(_), Ok(text)) => parse_history_csv(&text)?,
        _ => Vec::new(),
    };
    let mut log_epoch = |r: &fgv_core::train::EpochRecord, _: &Model<f32>| {
        log::info!("epoch {} loss {:.4} accuracy {:.2}%", r.epoch, r.loss, r.accuracy);
        Control::Continue
    };
    let report = match a.task {
        Task::Cls => train_classifier(&mut model, &samples, &cfg, resume, &mut log_epoch),
        Task::Loc => train_localiser(&mut model, &samples, &cfg, resume, &mut log_epoch),
    }
    .map_err(|e| match e {
        fgv_core::Error::ClassCountMismatch { .. } => usage(e.to_string()),
        e => e.into(),
    })?;
    history.extend_from_slice(&report.history);
    ckpt::save(&a.out, &model, &report.meta)?;
    crate::pnm::write_file(&history_path, history_csv(&history)?.as_bytes())?;
    if let Some(last) = report.history.last() {
        writeln!(out, "epoch {} loss {:.6} accuracy {:.3}%", last.epoch, last.loss, last.accuracy)?;
    }
    writeln!(out, "checkpoint: {}", a.out.display())?;
    writeln!(out, "history: {}", history_path.display())?;
    writeln!(out, "epochs: {} iterations: {}", report.meta.epochs, report.meta.iterations)?;
    Ok(())
}

/// Flags that shape the network must agree with the checkpoint being resumed.
fn check_resume(a: &TrainArgs, c: &ModelConfig, file: &FileConfig) -> CliResult {
    let mut clashes = Vec::new();
    if let Some(arch) = a.arch.or(file.model.arch) {
        if arch != c.depth.layers() {
            clashes.push(format!("arch {arch} vs {}", c.depth.layers()));
        }
    }
    if let Some(w) = a.width.or(file.model.width) {
        if w != c.width {
            clashes.push(format!("width {w} vs {}", c.width));
        }
    }
    if let Some(i) = a.input.or(file.model.input) {
        if i != c.input_size {
            clashes.push(format!("input {i} vs {}", c.input_size));
        }
    }
    if (a.task == Task::Loc) != c.head.is_loc() {
        clashes.push(format!("task vs {} head", c.head.name()));
    }
    if clashes.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(Error::Format(format!(
            "checkpoint does not match the requested network: {}",
            clashes.join(", ")
        ))))
    }
}

fn eval(a: EvalArgs, file: &FileConfig, out: &mut dyn Write) -> CliResult {
    let c = ckpt::load(&a.ckpt)?;
    let (m, samples) = load_samples(&a.manifest)?;
    let batch = pick(a.batch_size, file.eval.batch_size, 32);
    let input = c.model.config().input_size;
    if c.model.config().head.is_loc() {
        let view = match a.view.unwrap_or(ViewArg::Central) {
            ViewArg::Box => return Err(usage("localisers are evaluated with --view central or augment")),
            v => view_for(v, input, 0, 0.0),
        };
        let (r, stats) = evaluate_localiser(&c.model, &samples, &view, batch)?;
        writeln!(out, "view: {}", view.name())?;
        write!(out, "{}", format_metrics(&r, Some(&stats)))?;
    } else {
        if c.model.config().num_classes != m.classes {
            return Err(usage(format!(
                "checkpoint has {} classes, manifest has {}",
                c.model.config().num_classes,
                m.classes
            )));
        }
        let view = match a.view {
            Some(ViewArg::Augment) => return Err(usage("classifiers are evaluated with --view central or box")),
            Some(ViewArg::Box) => view_for(ViewArg::Box, input, 0, 0.0),
            _ => view_for(ViewArg::Central, input, 0, 0.0),
        };
        let r = evaluate_classifier(&c.model, &samples, &view, batch)?;
        writeln!(out, "view: {}", view.name())?;
        write!(out, "{}", format_metrics(&r, None))?;
    }
    Ok(())
}

fn pipeline(a: PipelineArgs, file: &FileConfig, out: &mut dyn Write) -> CliResult {
    let loc = ckpt::load(&a.loc)?;
    let cls = ckpt::load(&a.cls)?;
    let (m, samples) = load_samples(&a.manifest)?;
    if cls.model.config().num_classes != m.classes {
        return Err(usage(format!(
            "classifier has {} classes, manifest has {}",
            cls.model.config().num_classes,
            m.classes
        )));
    }
    let p = Pipeline::new(&loc.model, &cls.model).map_err(|e| usage(e.to_string()))?;
    let (r, fallbacks) = p.evaluate(&samples, a.gt_boxes, pick(a.batch_size, file.eval.batch_size, 32))?;
    writeln!(out, "boxes: {}", if a.gt_boxes { "ground-truth" } else { "localiser" })?;
    if fallbacks > 0 {
        log::warn!("{fallbacks} predicted boxes missed their image; used the central crop instead");
    }
    writeln!(out, "central-crop fallbacks: {fallbacks}")?;
    write!(out, "{}", format_metrics(&r, None))?;
    Ok(())
}

fn bench(a: BenchArgs, seed: u64, out: &mut dyn Write) -> CliResult {
    if a.images < MIN_IMAGES {
        return Err(usage(format!("--images must be at least {MIN_IMAGES}")));
    }
    if a.batches.is_empty() || a.batches.contains(&0) || a.pool == 0 {
        return Err(usage("batch sizes and --pool must be positive"));
    }
    let cls = ckpt::load(&a.ckpt)?;
    let loc = a.loc.as_deref().map(ckpt::load).transpose()?;
    let input = cls.model.config().input_size;
    let canvas = input * 8 / 7;
    let classes = cls.model.config().num_classes.max(2);
    let per = a.pool.div_ceil(classes);
    let synth = SynthConfig::new(classes, per, canvas, seed);
    let pool: Vec<RgbImage> = fgv_core::synth::generate_dataset(&synth)?
        .into_iter()
        .take(a.pool)
        .map(|s| s.image)
        .collect();
    for line in echo_lines(&[
        ("model", cls.model.config().to_text().replace('\n', " ").trim().to_string()),
        ("images", a.images.to_string()),
        ("pool", pool.len().to_string()),
    ]) {
        writeln!(out, "# {line}")?;
    }
    let batches = a
        .batches
        .iter()
        .map(|&b| model_batches(&pool, input, b))
        .collect::<Result<Vec<_>, _>>()?;
    let mut runners = Vec::new();
    for (&b, batches) in a.batches.iter().zip(&batches) {
        runners.push(Runner::new("model", b, model_runner(&cls.model, batches)));
        if let Some(l) = &loc {
            let pipe = Pipeline::new(&l.model, &cls.model).map_err(|e| usage(e.to_string()))?;
            runners.push(Runner::new("pipeline", b, pipeline_runner(pipe, &pool, b)));
        }
    }
    for line in measure(runners, a.images, a.rounds)? {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn heatmap(a: HeatmapArgs, out: &mut dyn Write) -> CliResult {
    let c = ckpt::load(&a.ckpt)?;
    let mc = *c.model.config();
    if !mc.head.has_swp() {
        return Err(usage("heatmaps need a checkpoint with an SWP head"));
    }
    let mut images: Vec<RgbImage> = a.inputs.iter().map(|p| read_ppm(p)).collect::<Result<_, _>>()?;
    if let Some(m) = &a.manifest {
        let (_, samples) = load_samples(m)?;
        images.extend(samples.into_iter().take(a.limit).map(|s| s.image));
    }
    if images.is_empty() {
        return Err(usage("no inputs: pass PPM paths or --manifest"));
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let frame = PreprocessConfig::for_input(mc.input_size);
    let layout = HeatmapLayout::masks_by_channels(&mc.swp, mc.feature_channels()?);
    for (i, img) in images.iter().enumerate() {
        let (crop, _) = preprocess_eval_center(img, &frame)?;
        let v = c.model.swp_output(to_tensor(&[&crop])?)?;
        let px = heatmap_pixels(v.data(), layout)?;
        let path = a.out_dir.join(format!("heatmap_{i:03}.pgm"));
        write_pgm(&path, layout.cols, layout.rows, &px)?;
        writeln!(out, "{}", path.display())?;
    }
    Ok(())
}

fn analyze_bins(a: AnalyzeBinsArgs, file: &FileConfig, seed: u64, out: &mut dyn Write) -> CliResult {
    let (_, samples) = load_samples(&a.manifest)?;
    let input = pick(a.input, file.model.input, 224);
    let bs = pick(a.bin_size, file.model.bin_size, BinSpec::DEFAULT_BIN_SIZE);
    let frame = PreprocessConfig {
        seed,
        ..PreprocessConfig::for_input(input)
    };
    let view = match a.view {
        BinsView::Raw => HistogramView::Raw,
        BinsView::Central => HistogramView::EvalCentre(frame),
        BinsView::Train => HistogramView::Train(frame),
    };
    let records: Vec<_> = samples.iter().map(|s| (s.image.width(), s.image.height(), s.bbox)).collect();
    let boxes = view_boxes(&records, &view)?;
    let h = bin_histogram(&boxes, &BinSpec::location(bs), &BinSpec::size(bs))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for p in write_histograms(&a.out_dir, &h)? {
        writeln!(out, "{}", p.display())?;
    }
    writeln!(out, "records: {}", boxes.len())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    /// Every flag's help names its default (or the flag is required).
    #[test]
    fn help_lists_defaults() {
        let cmd = Cli::command();
        for sub in cmd.get_subcommands() {
            for arg in sub.get_arguments() {
                if arg.is_positional() || arg.is_required_set() || arg.get_id() == "help" {
                    continue;
                }
                let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
                let documented = help.contains("[default:") || !arg.get_default_values().is_empty();
                let is_switch = matches!(arg.get_action(), ArgAction::SetTrue | ArgAction::Count);
                assert!(
                    documented || (is_switch && help.contains("default")),
                    "{} --{}: {help:?}",
                    sub.get_name(),
                    arg.get_id()
                );
            }
        }
    }
}

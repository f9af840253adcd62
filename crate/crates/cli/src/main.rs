//! `curvglyph`: extract curvature descriptors, train, evaluate and visualize.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curvglyph::cache::{CacheError, FeatureSet};
use curvglyph::checkpoint::{self, CheckpointError};
use curvglyph::features::assemble_features;
use curvglyph::fixtures;
use curvglyph::idx::{self, DatasetKind, GlyphImage, IdxError};
use curvglyph::nn::Mlp;
use curvglyph::pgm;
use curvglyph::pipeline::{self, PipelineError};
use curvglyph::split::{stratified_split, SplitError};
use curvglyph::train::{self, EpochRecord, TrainConfig, TrainError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "curvglyph", version, about = "Curvature descriptors for handwritten glyph classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract descriptors for a whole dataset and write them with a split plan.
    Extract(ExtractArgs),
    /// Train the classifier on an extracted feature file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one part of a feature file's split.
    Eval(EvalArgs),
    /// Write the three descriptor channels of one glyph as PGM images.
    Viz(VizArgs),
    /// Print split sizes without extracting features.
    SplitInfo(SplitInfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    #[value(name = "emnist-letters")]
    EmnistLetters,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::EmnistLetters => DatasetKind::EmnistLetters,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    dataset: DatasetArg,
    /// Directory holding the IDX files, directly or under mnist/ or emnist/.
    #[arg(long, env = "CURVGLYPH_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Feature file to write; the split plan goes to `<out>.split.json`.
    #[arg(long)]
    out: PathBuf,
    /// Keep only a stratified subset of this many samples before splitting.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature file written by `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Split plan; defaults to the sidecar next to the feature file.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    es_patience: usize,
    #[arg(long, default_value_t = 3)]
    plateau_patience: usize,
    #[arg(long, default_value_t = 0.5)]
    plateau_factor: f64,
    #[arg(long, default_value_t = 1e-5)]
    min_lr: f64,
    /// Zero wall-clock fields so repeated runs write identical files.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Fit,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    part: Part,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Constant,
    Disc,
}

#[derive(Args)]
struct VizArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Glyph index in the combined train+test set.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Render a synthetic glyph instead of reading the dataset.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// Disc radius in pixels.
    #[arg(long, default_value_t = 8.0)]
    radius: f64,
    /// Output stem; files are `<out>_mag.pgm`, `<out>_sign.pgm`, `<out>_theta.pgm`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitInfoArgs {
    #[command(flatten)]
    data: DataArgs,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(e: impl Display) -> Self {
        Self { code: 1, message: e.to_string() }
    }
    fn data(e: impl Display) -> Self {
        Self { code: 2, message: e.to_string() }
    }
    fn runtime(e: impl Display) -> Self {
        Self { code: 3, message: e.to_string() }
    }
}

impl From<IdxError> for Failure {
    fn from(e: IdxError) -> Self {
        Self::data(e)
    }
}

impl From<CacheError> for Failure {
    fn from(e: CacheError) -> Self {
        Self::data(e)
    }
}

impl From<SplitError> for Failure {
    fn from(e: SplitError) -> Self {
        Self::data(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self::data(e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::ConfigInvalid(_) => Self::usage(e),
            TrainError::DataMismatch(_) | TrainError::EmptyIndexSet => Self::data(e),
            TrainError::Nn(_) => Self::runtime(e),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::IoFailure { .. } => Self::runtime(e),
            _ => Self::data(e),
        }
    }
}

fn print_config(command: &str, config: serde_json::Value) {
    println!("config {command} {config}");
}

fn run_extract(args: ExtractArgs) -> Result<(), Failure> {
    let kind = DatasetKind::from(args.data.dataset);
    print_config(
        "extract",
        json!({
            "dataset": kind.name(),
            "data_dir": args.data.data_dir,
            "seed": args.data.seed,
            "out": args.out,
            "subset": args.subset,
            "test_fraction": pipeline::TEST_FRACTION,
            "val_fraction_of_train": pipeline::VAL_FRACTION_OF_TRAIN,
        }),
    );
    let (set, plan) = pipeline::extract_subset(kind, &args.data.data_dir, args.data.seed, args.subset)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Failure::runtime)?;
    }
    set.save(&args.out)?;
    let split_file = pipeline::split_path(&args.out);
    pipeline::save_split(&plan, &split_file)?;
    println!("samples={} features={}", set.len(), set.features.ncols());
    println!(
        "fit={} val={} test={}",
        plan.fit_indices.len(),
        plan.val_indices.len(),
        plan.test_indices.len()
    );
    println!("wrote {} and {}", args.out.display(), split_file.display());
    Ok(())
}

fn load_features(features: &Path, split: Option<&Path>) -> Result<(FeatureSet, curvglyph::SplitPlan), Failure> {
    let set = FeatureSet::load(features)?;
    let split_file = split.map_or_else(|| pipeline::split_path(features), Path::to_path_buf);
    let plan = pipeline::load_split(&split_file, set.len())?;
    Ok((set, plan))
}

fn format_record(r: &EpochRecord) -> String {
    format!(
        "epoch={} train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4} lr={:.4e} time={:.4}",
        r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr, r.wall_time
    )
}

fn run_train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        lr0: args.lr,
        max_epochs: args.max_epochs,
        es_patience: args.es_patience,
        plateau_patience: args.plateau_patience,
        plateau_factor: args.plateau_factor,
        min_lr: args.min_lr,
        seed: args.seed,
        deterministic: args.deterministic,
        ..TrainConfig::default()
    };
    print_config(
        "train",
        json!({
            "features": args.features,
            "split": args.split,
            "out": args.out,
            "train": cfg,
        }),
    );
    cfg.validate()?;
    let (set, plan) = load_features(&args.features, args.split.as_deref())?;
    let model = Mlp::curvature_mlp(set.num_classes, cfg.seed).map_err(Failure::data)?;
    let arch = model.architecture();
    println!(
        "model input={} hidden={:?} classes={} params={}",
        arch.input_dim,
        arch.hidden.iter().map(|h| h.units).collect::<Vec<_>>(),
        arch.num_classes,
        arch.trainable_parameters()
    );
    let (model, report) = train::train_with_progress(
        model,
        set.features.view(),
        &set.labels,
        &plan,
        &cfg,
        |r| println!("{}", format_record(r)),
    )?;
    checkpoint::save_checkpoint(&model, Some(&report), &args.out)?;
    println!("best_epoch={} stopped_early={}", report.best_epoch, report.stopped_early);
    if let (Some(loss), Some(top1)) = (report.test_loss, report.test_accuracy) {
        println!("test_loss={loss:.4}");
        println!("test_top1={top1:.4}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), Failure> {
    let part = match args.part {
        Part::Fit => "fit",
        Part::Val => "val",
        Part::Test => "test",
    };
    print_config(
        "eval",
        json!({
            "checkpoint": args.checkpoint,
            "features": args.features,
            "split": args.split,
            "part": part,
        }),
    );
    let (set, plan) = load_features(&args.features, args.split.as_deref())?;
    let model = checkpoint::load_checkpoint_for(&args.checkpoint, set.num_classes)?;
    let indices = match args.part {
        Part::Fit => &plan.fit_indices,
        Part::Val => &plan.val_indices,
        Part::Test => &plan.test_indices,
    };
    let (loss, top1) = train::evaluate(&model, set.features.view(), &set.labels, indices)?;
    println!("samples={}", indices.len());
    println!("{part}_loss={loss:.4}");
    println!("{part}_top1={top1:.4}");
    Ok(())
}

fn run_viz(args: VizArgs) -> Result<(), Failure> {
    let kind = DatasetKind::from(args.data.dataset);
    let source = match args.fixture {
        Some(Fixture::Constant) => "fixture:constant".to_string(),
        Some(Fixture::Disc) => "fixture:disc".to_string(),
        None => format!("{}[{}]", kind.name(), args.index),
    };
    print_config(
        "viz",
        json!({
            "source": source,
            "data_dir": args.data.data_dir,
            "radius": args.radius,
            "out": args.out,
        }),
    );
    let glyph: GlyphImage = match args.fixture {
        Some(Fixture::Constant) => GlyphImage::constant(0.5),
        Some(Fixture::Disc) => {
            if !(args.radius > 0.0 && args.radius.is_finite()) {
                return Err(Failure::usage(format!("radius must be positive, got {}", args.radius)));
            }
            fixtures::render_disc(args.radius, 14.0, 14.0)
        }
        None => {
            let dir = pipeline::resolve_dataset_dir(&args.data.data_dir, kind);
            let dataset = idx::load_dataset(kind, &dir)?;
            let Some(img) = dataset.images().get(args.index) else {
                return Err(Failure::data(format!(
                    "index {} out of range for {} glyphs",
                    args.index,
                    dataset.len()
                )));
            };
            println!("label={}", dataset.labels()[args.index]);
            img.clone()
        }
    };
    let maps = assemble_features(&glyph);
    for path in pgm::write_feature_pgms(&maps, &args.out).map_err(Failure::runtime)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_split_info(args: SplitInfoArgs) -> Result<(), Failure> {
    let kind = DatasetKind::from(args.data.dataset);
    print_config(
        "split-info",
        json!({
            "dataset": kind.name(),
            "data_dir": args.data.data_dir,
            "seed": args.data.seed,
            "test_fraction": pipeline::TEST_FRACTION,
            "val_fraction_of_train": pipeline::VAL_FRACTION_OF_TRAIN,
        }),
    );
    let dir = pipeline::resolve_dataset_dir(&args.data.data_dir, kind);
    let dataset = idx::load_dataset(kind, &dir)?;
    let plan = stratified_split(
        dataset.labels(),
        dataset.num_classes(),
        pipeline::TEST_FRACTION,
        pipeline::VAL_FRACTION_OF_TRAIN,
        args.data.seed,
    )?;
    println!("samples={} classes={}", dataset.len(), dataset.num_classes());
    println!(
        "fit={} val={} test={}",
        plan.fit_indices.len(),
        plan.val_indices.len(),
        plan.test_indices.len()
    );
    let counts = |idx: &[usize]| {
        let mut c = vec![0usize; dataset.num_classes()];
        for &i in idx {
            c[usize::from(dataset.labels()[i])] += 1;
        }
        c
    };
    let (fit, val, test) = (counts(&plan.fit_indices), counts(&plan.val_indices), counts(&plan.test_indices));
    for class in 0..dataset.num_classes() {
        println!("class={class} fit={} val={} test={}", fit[class], val[class], test[class]);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Extract(a) => run_extract(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Viz(a) => run_viz(a),
        Command::SplitInfo(a) => run_split_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

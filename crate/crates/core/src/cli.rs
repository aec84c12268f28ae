//! `histoconv` command line: train, evaluate, predict, export-filters, plot, split.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::data::{
    discover_classes, load_image, resize_bilinear, scan_dataset, split_stratified,
    DatasetManifest, Split, SplitRatios,
};
use crate::error::{Error, Result};
use crate::loss::{aggregate_mean_std, format_mean_std};
use crate::model::{evaluate, load_checkpoint, Checkpoint, TrainConfig, Trainer, METRICS_FILE};
use crate::report::{config::parse_classes, export_filters, plot_curves, RunConfig, CONFIG_FILE};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.tsv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "histoconv", version, about = "Shallow CNN for histopathology tiles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write all run artifacts under --out.
    Train(TrainArgs),
    /// Print `split,loss,accuracy` for one or more checkpoints.
    Evaluate(EvaluateArgs),
    /// Print `path,label,p_0,...` for each image.
    Predict(PredictArgs),
    /// Write one filter-grid PNG per convolution layer.
    ExportFilters(ExportArgs),
    /// Render loss.png and accuracy.png from a metrics CSV.
    Plot(PlotArgs),
    /// Scan a dataset and write a stratified split manifest.
    Split(SplitArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Dataset root with one sub-directory per class.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated class directory names, in label order.
    #[arg(long)]
    pub classes: Option<String>,
    /// Train,val,test fractions.
    #[arg(long)]
    pub ratios: Option<SplitRatios>,
    /// Split and shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Existing manifest file to use instead of scanning --data.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub pool_stride: Option<u64>,
    /// Square extent images are resized to.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Checkpoint cadence in epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Disable training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Data-loading threads.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoints to evaluate; several print a mean ± std summary.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "val")]
    pub split: Split,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Append the result rows to this CSV.
    #[arg(long)]
    pub append: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Manifest path to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `std::env::args` and runs the chosen command.
pub fn run() -> i32 {
    run_with(std::env::args_os())
}

pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::ExportFilters(a) => cmd_export(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Split(a) => cmd_split(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Scans `data` (or loads `manifest`) into a split manifest.
fn build_manifest(
    data: Option<&Path>,
    manifest: Option<&Path>,
    classes: &[String],
    ratios: SplitRatios,
    seed: u64,
) -> CliResult<DatasetManifest> {
    if let Some(m) = manifest {
        return Ok(DatasetManifest::read(m)?);
    }
    let root = data.ok_or_else(|| usage("--data or --manifest is required"))?;
    if !root.is_dir() {
        return Err(usage(format!("dataset root {} is not a directory", root.display())));
    }
    let classes = if classes.is_empty() {
        discover_classes(root)?
    } else {
        classes.to_vec()
    };
    let entries = scan_dataset(root, &classes)?;
    Ok(split_stratified(&entries, &classes, ratios, seed)?)
}

fn resolve_train_config(a: &TrainArgs, ckpt: Option<&(PathBuf, Checkpoint)>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some((path, c)) = ckpt {
        cfg.train = TrainConfig::from_text(&c.config).map_err(usage)?;
        cfg.ratios = c.manifest.ratios;
        cfg.classes = c.manifest.classes.clone();
        cfg.out = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    }
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.apply_text(&text, p).map_err(usage)?;
    }
    let d = &a.data;
    if let Some(v) = &d.data {
        cfg.data = Some(v.clone());
    }
    if let Some(v) = &d.classes {
        cfg.classes = parse_classes(v);
    }
    if let Some(v) = d.ratios {
        cfg.ratios = v;
    }
    if let Some(v) = &d.manifest {
        cfg.manifest = Some(v.clone());
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    let t = &mut cfg.train;
    if let Some(v) = d.seed {
        t.seed = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v as usize;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v as usize;
    }
    if let Some(v) = a.lr {
        t.optimizer.learning_rate = v;
    }
    if let Some(v) = a.rho {
        t.optimizer.rho = v;
    }
    if let Some(v) = a.epsilon {
        t.optimizer.epsilon = v;
    }
    if let Some(v) = a.dropout {
        t.dropout_rate = v;
    }
    if let Some(v) = a.pool_stride {
        t.pool_stride = v as usize;
    }
    if let Some(v) = a.input_size {
        t.input_size = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if a.no_augment {
        t.augment = crate::data::AugmentConfig::disabled();
    }
    if let Some(v) = a.workers {
        t.workers = v;
    }
    t.validate().map_err(usage)?;
    cfg.ratios.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CliResult<i32> {
    let ckpt = match &a.resume {
        Some(p) => Some((p.clone(), load_checkpoint(p)?)),
        None => None,
    };
    let cfg = resolve_train_config(&a, ckpt.as_ref())?;
    let run_dir = cfg.out.clone();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let saved_manifest = run_dir.join(MANIFEST_FILE);
    let manifest = if cfg.manifest.is_none() && ckpt.is_some() && saved_manifest.exists() {
        DatasetManifest::read(&saved_manifest)?
    } else {
        let seed = ckpt.as_ref().map_or(cfg.train.seed, |(_, c)| c.manifest.seed);
        build_manifest(
            cfg.data.as_deref(),
            cfg.manifest.as_deref(),
            &cfg.classes,
            cfg.ratios,
            seed,
        )?
    };
    if !(2..=3).contains(&manifest.num_classes()) {
        return Err(usage(format!(
            "the model supports 2 or 3 classes, the dataset has {}",
            manifest.num_classes()
        )));
    }
    manifest.write(&saved_manifest)?;
    std::fs::write(run_dir.join(CONFIG_FILE), cfg.to_text())
        .map_err(|e| Error::io(run_dir.join(CONFIG_FILE), e))?;
    info!(
        "classes {:?}; train/val/test = {}/{}/{}",
        manifest.classes,
        manifest.split_len(Split::Train),
        manifest.split_len(Split::Val),
        manifest.split_len(Split::Test)
    );

    let trainer = match ckpt {
        Some((_, c)) => Trainer::resume(&manifest, cfg.train.clone(), c)?,
        None => Trainer::new(&manifest, cfg.train.clone())?,
    };
    let mut trainer = trainer.with_run_dir(&run_dir)?;
    let report = trainer.fit()?;
    plot_curves(&run_dir.join(METRICS_FILE), &run_dir)?;
    export_filters(trainer.model(), &run_dir)?;
    if let Some(m) = report.last() {
        println!(
            "epoch {}: train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
    }
    Ok(EXIT_OK)
}

fn manifest_for_checkpoint(c: &Checkpoint, path: &Path, d: &DataArgs) -> CliResult<DatasetManifest> {
    if d.manifest.is_none() && d.data.is_none() {
        let saved = path.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
        if saved.exists() {
            return Ok(DatasetManifest::read(&saved)?);
        }
    }
    let classes = d
        .classes
        .as_deref()
        .map(parse_classes)
        .unwrap_or_else(|| c.manifest.classes.clone());
    build_manifest(
        d.data.as_deref(),
        d.manifest.as_deref(),
        &classes,
        d.ratios.unwrap_or(c.manifest.ratios),
        d.seed.unwrap_or(c.manifest.seed),
    )
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<i32> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let mut rows = Vec::new();
    for path in &a.checkpoint {
        let c = load_checkpoint(path)?;
        let manifest = manifest_for_checkpoint(&c, path, &a.data)?;
        let (loss, acc) = evaluate(
            &c.model,
            &manifest,
            a.split,
            a.batch_size,
            crate::data::default_workers(),
        )?;
        rows.push((loss, acc));
    }
    let mut out = String::from("split,loss,accuracy\n");
    for (loss, acc) in &rows {
        let _ = writeln!(out, "{},{loss:.6},{acc:.6}", a.split);
    }
    print!("{out}");
    if rows.len() > 1 {
        let (lm, ls) = aggregate_mean_std(&rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
        let (am, as_) = aggregate_mean_std(&rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
        println!(
            "{} loss {} accuracy {}",
            a.split,
            format_mean_std(lm, ls),
            format_mean_std(am, as_)
        );
    }
    if let Some(p) = &a.append {
        use std::io::Write;
        let fresh = !p.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map_err(|e| Error::io(p, e))?;
        let body = if fresh { out.as_str() } else { out.split_once('\n').map_or("", |x| x.1) };
        f.write_all(body.as_bytes()).map_err(|e| Error::io(p, e))?;
    }
    Ok(EXIT_OK)
}

/// Loads and resizes one image to the model input, as a batch of one.
fn prepare_image(path: &Path, hw: (usize, usize)) -> Result<Tensor> {
    let img = load_image(path)?;
    let img = resize_bilinear(&img, hw.0, hw.1)?;
    img.into_reshape([1, hw.0, hw.1, 3])
}

fn cmd_predict(a: PredictArgs) -> CliResult<i32> {
    let c = load_checkpoint(&a.checkpoint)?;
    let [h, w, _] = c.model.spec().input_shape;
    let mut failed = false;
    for path in &a.images {
        let probs = prepare_image(path, (h, w)).and_then(|x| c.model.predict(&x));
        match probs {
            Ok(p) => {
                let k = p.argmax_rows()?[0];
                let label = c
                    .manifest
                    .classes
                    .get(k)
                    .cloned()
                    .unwrap_or_else(|| k.to_string());
                let mut line = format!("{},{label}", path.display());
                for v in p.data() {
                    let _ = write!(line, ",{v:.6}");
                }
                println!("{line}");
            }
            Err(e) => {
                failed = true;
                eprintln!("{},error,{e}", path.display());
            }
        }
    }
    Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
}

fn cmd_export(a: ExportArgs) -> CliResult<i32> {
    let c = load_checkpoint(&a.checkpoint)?;
    for p in export_filters(&c.model, &a.out)? {
        println!("{}", p.display());
    }
    Ok(EXIT_OK)
}

fn cmd_plot(a: PlotArgs) -> CliResult<i32> {
    let (l, acc) = plot_curves(&a.metrics, &a.out)?;
    println!("{}\n{}", l.display(), acc.display());
    Ok(EXIT_OK)
}

fn cmd_split(a: SplitArgs) -> CliResult<i32> {
    let d = &a.data;
    let classes = d.classes.as_deref().map(parse_classes).unwrap_or_default();
    let ratios = d.ratios.unwrap_or_default();
    ratios.validate().map_err(usage)?;
    let m = build_manifest(
        d.data.as_deref(),
        d.manifest.as_deref(),
        &classes,
        ratios,
        d.seed.unwrap_or(TrainConfig::default().seed),
    )?;
    m.write(&a.out)?;
    println!("class,train,val,test");
    for (name, [tr, va, te]) in m.classes.iter().zip(m.class_split_counts()) {
        println!("{name},{tr},{va},{te}");
    }
    Ok(EXIT_OK)
}

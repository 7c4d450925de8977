//! `facesketch` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
//! Tables and reports go to stdout; logs and diagnostics go to stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use facesketch_core::attributes::{Split, Style};
use facesketch_core::image::Image;
use facesketch_core::trainer::{default_config, ModelConfig, SketchGan, Task, TrainConfig};

use crate::checkpoint::CheckpointRecord;
use crate::dataset::{load_manifest, load_pair, pair_id_for, stats_table};
use crate::detect::{CommandDetector, DetectQuery, FixtureRegions, RegionProvider};
use crate::error::{Error, ErrorClass, Result};
use crate::eval::{evaluate_pairs, metric_by_name, prediction_path, reference_path};
use crate::imageio::{read_channels, write_png, Letterbox};
use crate::report::{emit_report, gallery, read_report, write_report, ReportFormat};
use crate::synthetic::{write_dataset, SyntheticSpec};
use crate::train::{train_run, TrainOptions};

#[derive(Debug, Parser)]
#[command(
    name = "facesketch",
    version,
    about = "Two-stage facial sketch synthesis: data, training, inference, evaluation"
)]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset root and print per-split attribute counts.
    Prepare(PrepareArgs),
    /// Train a model and write checkpoints plus a loss curve.
    Train(TrainArgs),
    /// Translate images with a trained checkpoint.
    Infer(InferArgs),
    /// Score a prediction directory against dataset references.
    Eval(EvalArgs),
    /// Render saved metric reports as a comparison table.
    Report(ReportArgs),
    /// Write an input | reference | prediction grid for a split.
    Gallery(GalleryArgs),
}

#[derive(Debug, Args)]
pub struct RootArg {
    /// Dataset root holding anno_*.json, photo/ and sketch/.
    #[arg(long, env = "FSS_DATA_ROOT")]
    pub root: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub root: RootArg,
    /// Generate a procedural dataset at --root before validating it.
    #[arg(long)]
    pub synthetic: bool,
    /// Training pairs to generate with --synthetic.
    #[arg(long, default_value_t = 12, requires = "synthetic")]
    pub train_pairs: usize,
    /// Test pairs to generate with --synthetic.
    #[arg(long, default_value_t = 6, requires = "synthetic")]
    pub test_pairs: usize,
    /// Side length of generated images.
    #[arg(long, default_value_t = 64, requires = "synthetic")]
    pub size: usize,
    /// Seed for generated images.
    #[arg(long, default_value_t = 0, requires = "synthetic")]
    pub synthetic_seed: u64,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    /// Region fixture file (JSON keyed by pair id). Defaults to regions.json
    /// in the image directory or its parent when present.
    #[arg(long, conflicts_with = "detector")]
    pub regions: Option<PathBuf>,
    /// External detector command; receives the image path as its last
    /// argument and prints the region JSON.
    #[arg(long)]
    pub detector: Option<String>,
}

impl RegionArgs {
    fn provider(&self, fallback_dir: &Path) -> Result<Option<Box<dyn RegionProvider>>> {
        if let Some(cmd) = &self.detector {
            return Ok(Some(Box::new(CommandDetector::parse(cmd)?)));
        }
        if let Some(p) = &self.regions {
            return Ok(Some(Box::new(FixtureRegions::load(p)?)));
        }
        // A dataset root keeps the fixture beside photo/ and sketch/.
        let found = std::iter::once(fallback_dir)
            .chain(fallback_dir.parent())
            .map(|d| d.join(FixtureRegions::DEFAULT_FILE))
            .find(|p| p.is_file());
        match found {
            Some(p) => Ok(Some(Box::new(FixtureRegions::load(&p)?))),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[command(flatten)]
    pub root: RootArg,
    /// Output directory for checkpoints and loss_curve.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file overriding fields of the default configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Drop the per-component stage and feed the raw input to the refiner.
    #[arg(long)]
    pub no_multi_patch: bool,
    /// Drop the style label from the refiner.
    #[arg(long)]
    pub no_style: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training resolution; rebuilds the model block with --width.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Base channel width; rebuilds the model block with --resolution.
    #[arg(long)]
    pub width: Option<usize>,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub regions: RegionArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Drawing style 1, 2 or 3 (style-conditioned i2s models only; defaults
    /// to 1 there).
    #[arg(long)]
    pub style: Option<u8>,
    #[command(flatten)]
    pub regions: RegionArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of <pair_id>.png predictions.
    #[arg(long)]
    pub pred: PathBuf,
    #[command(flatten)]
    pub root: RootArg,
    /// ssim, or any name together with --plugin.
    #[arg(long, default_value = "ssim")]
    pub metric: String,
    /// External scorer command for metrics without a built-in
    /// implementation; called as `<command> <prediction> <reference>`.
    #[arg(long)]
    pub plugin: Option<String>,
    /// Which references to compare against.
    #[arg(long, value_parser = parse_task, default_value = "i2s")]
    pub task: Task,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    /// Row label in reports; defaults to the prediction directory name.
    #[arg(long)]
    pub model: Option<String>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files written by `eval`.
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_parser = parse_format, default_value = "markdown")]
    pub format: ReportFormat,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GalleryArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[command(flatten)]
    pub root: RootArg,
    #[arg(long, value_parser = parse_task, default_value = "i2s")]
    pub task: Task,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    /// Rows to include, in manifest order.
    #[arg(long, default_value_t = 8)]
    pub limit: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).map_err(|e| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    ReportFormat::parse(s).map_err(|e| e.to_string())
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Runtime => 3,
        }
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Gallery(a) => gallery_cmd(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let root = &a.root.root;
    if a.synthetic {
        write_dataset(
            root,
            &SyntheticSpec {
                train: a.train_pairs,
                test: a.test_pairs,
                height: a.size,
                width: a.size,
                seed: a.synthetic_seed,
            },
        )?;
        log::info!("wrote a synthetic dataset to {}", root.display());
    }
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
        ));
    }
    let manifest = load_manifest(root)?;
    for entry in &manifest.entries {
        load_pair(entry, None)?;
    }
    let stats = [manifest.split_stats(Split::Train), manifest.split_stats(Split::Test)];
    for s in &stats {
        s.check_consistency()?;
    }
    println!(
        "validated {} pairs ({} train, {} test)",
        manifest.entries.len(),
        stats[0].total,
        stats[1].total
    );
    print!("{}", stats_table(&stats));
    Ok(())
}

/// Overlay the TOML table `over` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, over: toml::Table, at: &str) -> Result<()> {
    const OPTIONAL: [&str; 1] = ["freeze_stage1_after"];
    for (k, v) in over {
        let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &path)?,
            (Some(slot), v) => *slot = v,
            (None, v) if at.is_empty() && OPTIONAL.contains(&k.as_str()) => {
                base.insert(k, v);
            }
            (None, _) => return Err(Error::Usage(format!("unknown config key {path}"))),
        }
    }
    Ok(())
}

/// Defaults for `task`, then the config file, then flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = default_config(a.task);
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let over: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Usage(format!("{}: {e}", path.display())))?;
        let mut base = toml::Table::try_from(&config).expect("config serializes to TOML");
        merge(&mut base, over, "")?;
        config = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Usage(format!("{}: {e}", path.display())))?;
        config.task = a.task;
    }
    if a.no_multi_patch {
        config.ablation.use_multi_patch = false;
    }
    if a.no_style {
        if a.task == Task::S2i {
            log::warn!("--no-style has no effect on s2i, which never uses the style label");
        }
        config.ablation.use_style_vector = false;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        config.epochs = epochs;
        if config.freeze_stage1_after.is_some_and(|f| f >= epochs) {
            log::warn!("freeze epoch is past the shortened schedule; stage 1 stays trainable");
            config.freeze_stage1_after = None;
        }
    }
    if a.resolution.is_some() || a.width.is_some() {
        let d = ModelConfig::default();
        config.model = ModelConfig::new(a.resolution.unwrap_or(d.resolution), a.width.unwrap_or(d.part_width));
    }
    config.validate()?;
    Ok(config)
}

fn train(a: TrainArgs) -> Result<()> {
    let config = resolve_train_config(&a)?;
    let manifest = load_manifest(&a.root.root)?;
    let provider = if config.ablation.use_multi_patch {
        a.regions.provider(&a.root.root)?
    } else {
        None
    };
    let outcome = train_run(
        &manifest,
        &config,
        &a.out,
        provider.as_deref(),
        &TrainOptions {
            resume: a.resume.clone(),
        },
    )?;
    println!("{}", outcome.final_checkpoint.display());
    Ok(())
}

const INPUT_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_owned()]);
    }
    let rd = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(input, e))?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| INPUT_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if p.is_file() && ok {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::io(
            input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no images found"),
        ));
    }
    Ok(files)
}

/// Run `model` on one stored image and return the output at the input's size.
pub fn infer_file(
    model: &SketchGan,
    path: &Path,
    provider: Option<&dyn RegionProvider>,
    style: Option<Style>,
) -> Result<Image<u8>> {
    let task = model.config.task;
    let (cin, _) = task.channels();
    let raw = read_channels(path, cin)?;
    let lb = Letterbox::fit(raw.dims(), model.config.model.resolution);
    let fill = match task {
        Task::I2s => 0,
        Task::S2i => 255,
    };
    let input = lb.apply(&raw, fill).normalized();
    let pair_id = pair_id_for(&path.file_name().unwrap_or_default().to_string_lossy());
    let regions = match (&model.stage1, provider) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::Usage(
                "this model needs facial regions: pass --regions or --detector".into(),
            ))
        }
        (Some(_), Some(p)) => {
            let r = p.detect(&DetectQuery {
                pair_id: &pair_id,
                image_path: path,
                dims: raw.dims(),
            })?;
            Some(lb.regions(&r))
        }
    };
    let out = model.infer(&input, regions.as_ref(), style)?;
    lb.invert(&out.quantized())
}

fn infer(a: InferArgs) -> Result<()> {
    let record = CheckpointRecord::load(&a.checkpoint)?;
    let model = record.restore()?;
    let style = match (model.config.style_conditioned(), a.style) {
        (_, Some(label)) => Some(Style::from_label(label)?),
        (true, None) => {
            log::info!("no --style given; using style 1");
            Some(Style::Style1)
        }
        (false, None) => None,
    };
    let inputs = list_inputs(&a.input)?;
    let dir = if a.input.is_dir() {
        a.input.clone()
    } else {
        a.input.parent().map(Path::to_owned).unwrap_or_default()
    };
    let provider = match model.stage1 {
        Some(_) => a.regions.provider(&dir)?,
        None => None,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for path in &inputs {
        let out = infer_file(&model, path, provider.as_deref(), style)?;
        let pair_id = pair_id_for(&path.file_name().unwrap_or_default().to_string_lossy());
        let dest = prediction_path(&a.out, &pair_id);
        write_png(&dest, &out)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let metric = metric_by_name(&a.metric, a.plugin.as_deref())?;
    let manifest = load_manifest(&a.root.root)?;
    let model = a.model.clone().unwrap_or_else(|| {
        a.pred
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let report = evaluate_pairs(&a.pred, &manifest, a.split, a.task, metric.as_ref(), &model)?;
    match &a.out {
        Some(path) => {
            write_report(path, &report)?;
            println!("{} {} {:.3}", report.model, report.metric, report.overall);
        }
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let reports = a.inputs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    let table = emit_report(&reports, a.format)?;
    match &a.out {
        Some(path) => std::fs::write(path, &table).map_err(|e| Error::io(path, e))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn gallery_cmd(a: GalleryArgs) -> Result<()> {
    let manifest = load_manifest(&a.root.root)?;
    let (cin, cout) = a.task.channels();
    let (mut inputs, mut refs, mut preds) = (Vec::new(), Vec::new(), Vec::new());
    for entry in manifest.split(a.split).take(a.limit) {
        let input = match a.task {
            Task::I2s => &entry.photo,
            Task::S2i => &entry.sketch,
        };
        inputs.push(read_channels(input, cin)?);
        refs.push(read_channels(reference_path(entry, a.task), cout)?);
        let pred = prediction_path(&a.pred, &entry.pair_id);
        if !pred.is_file() {
            return Err(Error::pair(
                &entry.pair_id,
                format!("no prediction at {}", pred.display()),
            ));
        }
        preds.push(read_channels(&pred, cout)?);
    }
    gallery(&inputs, &refs, &preds, &a.out)?;
    println!("{}", a.out.display());
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

    fn train_args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["facesketch", "train", "--root", "r", "--out", "o"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn ablation_flags() {
        let base = resolve_train_config(&train_args(&["--task", "i2s", "--no-multi-patch", "--no-style"])).unwrap();
        assert!(!base.ablation.use_multi_patch && !base.ablation.use_style_vector);
        let s2i = resolve_train_config(&train_args(&["--task", "s2i"])).unwrap();
        assert_eq!((s2i.epochs, s2i.freeze_stage1_after), (400, Some(250)));
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "epochs = 7\nseed = 3\n[stage2_weights]\nlambda_1 = 5.0\n").unwrap();
        let p = path.to_str().unwrap();
        let c = resolve_train_config(&train_args(&["--task", "i2s", "--config", p, "--seed", "9"])).unwrap();
        assert_eq!((c.epochs, c.seed, c.stage2_weights.lambda_1), (7, 9, 5.0));
        std::fs::write(&path, "epoch = 7\n").unwrap();
        let err = resolve_train_config(&train_args(&["--task", "i2s", "--config", p])).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Usage);
    }

    #[test]
    fn unknown_flag_is_usage() {
        assert_eq!(run(["facesketch", "train", "--bogus"]), 1);
        assert_eq!(run(["facesketch", "--help"]), 0);
    }
}

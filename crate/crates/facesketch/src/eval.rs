//! Scoring predictions against dataset references.
//!
//! Predictions live at `<dir>/<pair_id>.png`. References are resized to the
//! prediction's size before scoring.

use std::path::{Path, PathBuf};
use std::process::Command;

use facesketch_core::attributes::Split;
use facesketch_core::image::Image;
use facesketch_core::metrics::{MetricReport, ScoredPair};
use facesketch_core::ssim::ssim;
use facesketch_core::trainer::Task;

use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::imageio::{read_channels, resize};

/// An image handed to a metric, with the file it came from.
#[derive(Clone, Copy, Debug)]
pub struct MetricInput<'a> {
    pub path: &'a Path,
    pub image: &'a Image<u8>,
}

/// A similarity score between a prediction and its reference. Higher is
/// better; plugins document their own range.
pub trait MetricPlugin {
    fn name(&self) -> &str;
    fn score(&self, prediction: MetricInput<'_>, reference: MetricInput<'_>) -> Result<f64>;
}

/// Windowed SSIM, averaged over channels for colour images. Range `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SsimMetric;

impl MetricPlugin for SsimMetric {
    fn name(&self) -> &str {
        "SSIM"
    }

    fn score(&self, p: MetricInput<'_>, r: MetricInput<'_>) -> Result<f64> {
        Ok(ssim(p.image, r.image)?)
    }
}

/// Delegates to `program [args..] <prediction> <reference>`, which must
/// print a single number in `[0, 1]`. The reference path is the original
/// dataset file, so the program handles any resizing itself.
#[derive(Clone, Debug)]
pub struct CommandMetric {
    pub name: String,
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CommandMetric {
    pub fn parse(name: &str, command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Usage("empty metric plugin command".into()))?;
        Ok(CommandMetric {
            name: name.to_owned(),
            program: program.into(),
            args: parts.map(str::to_owned).collect(),
        })
    }
}

impl MetricPlugin for CommandMetric {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, p: MetricInput<'_>, r: MetricInput<'_>) -> Result<f64> {
        let fail = |message: String| Error::Plugin {
            name: self.name.clone(),
            message,
        };
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(p.path)
            .arg(r.path)
            .output()
            .map_err(|e| fail(format!("cannot run {}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let v: f64 = text
            .trim()
            .parse()
            .map_err(|_| fail(format!("expected a number, got {:?}", text.trim())))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(fail(format!("score {v} outside [0, 1]")));
        }
        Ok(v)
    }
}

/// Resolve a metric name. `scoot` has no built-in implementation and needs
/// an external command.
pub fn metric_by_name(name: &str, plugin: Option<&str>) -> Result<Box<dyn MetricPlugin>> {
    match (name.to_ascii_lowercase().as_str(), plugin) {
        ("ssim", None) => Ok(Box::new(SsimMetric)),
        ("ssim", Some(_)) => Err(Error::Usage("ssim is built in and takes no plugin".into())),
        (_, Some(cmd)) => Ok(Box::new(CommandMetric::parse(&name.to_ascii_uppercase(), cmd)?)),
        ("scoot", None) => Err(Error::Usage("scoot needs --plugin <command>".into())),
        (other, None) => Err(Error::Usage(format!("unknown metric {other:?}"))),
    }
}

pub fn prediction_path(dir: &Path, pair_id: &str) -> PathBuf {
    dir.join(format!("{pair_id}.png"))
}

/// The dataset image a prediction for `task` is compared against.
pub fn reference_path(entry: &ManifestEntry, task: Task) -> &Path {
    match task {
        Task::I2s => &entry.sketch,
        Task::S2i => &entry.photo,
    }
}

/// Score one prediction.
pub fn score_pair(pred_dir: &Path, entry: &ManifestEntry, task: Task, metric: &dyn MetricPlugin) -> Result<f64> {
    let pred_path = prediction_path(pred_dir, &entry.pair_id);
    if !pred_path.is_file() {
        return Err(Error::pair(
            &entry.pair_id,
            format!("no prediction at {}", pred_path.display()),
        ));
    }
    let channels = task.channels().1;
    let pred = read_channels(&pred_path, channels)?;
    let ref_path = reference_path(entry, task);
    let mut reference = read_channels(ref_path, channels)?;
    if reference.dims() != pred.dims() {
        reference = resize(&reference, pred.height(), pred.width());
    }
    metric
        .score(
            MetricInput {
                path: &pred_path,
                image: &pred,
            },
            MetricInput {
                path: ref_path,
                image: &reference,
            },
        )
        .map_err(|e| match e {
            Error::Core(c) => Error::pair(&entry.pair_id, c.to_string()),
            other => other,
        })
}

/// Score every pair of `split` and aggregate into attribute slices.
pub fn evaluate_pairs(
    pred_dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
    task: Task,
    metric: &dyn MetricPlugin,
    model: &str,
) -> Result<MetricReport> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::Usage(format!("the {} split is empty", split.name())));
    }
    let scores = entries
        .iter()
        .map(|e| score_pair(pred_dir, e, task, metric))
        .collect::<Result<Vec<f64>>>()?;
    let scored = entries.iter().zip(&scores).map(|(e, &score)| ScoredPair {
        attributes: &e.attributes,
        style: e.style,
        score,
    });
    Ok(MetricReport::aggregate(metric.name(), model, scored)?)
}

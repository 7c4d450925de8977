//! Epoch loop around [`SketchGan::train_step`]: data preparation, seeded
//! shuffling, the loss curve, checkpoints and resume.

use std::fs::File;
use std::path::{Path, PathBuf};

use facesketch_core::attributes::Split;
use facesketch_core::trainer::{Sample, SketchGan, StepRecord, Task, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{config_hash, CheckpointRecord};
use crate::dataset::{load_pair, DatasetManifest, PhotoSketchPair};
use crate::detect::{DetectQuery, RegionProvider};
use crate::error::{Error, Result};

pub const LOSS_CURVE: &str = "loss_curve.csv";
pub const FINAL_CHECKPOINT: &str = "final.fsk";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.fsk")
}

/// Network input and reference for `task`, on the `[-1, 1]` scale.
pub fn to_sample(pair: &PhotoSketchPair, task: Task) -> Sample {
    let (input, target) = match task {
        Task::I2s => (&pair.photo, &pair.sketch),
        Task::S2i => (&pair.sketch, &pair.photo),
    };
    Sample {
        pair_id: pair.pair_id.clone(),
        input: input.normalized(),
        target: target.normalized(),
        regions: None,
        style: pair.style,
    }
}

/// Load `split` at the configured resolution and attach regions when the
/// model needs them.
pub fn prepare_samples(
    manifest: &DatasetManifest,
    split: Split,
    config: &TrainConfig,
    provider: Option<&dyn RegionProvider>,
) -> Result<Vec<Sample>> {
    let resolution = config.model.resolution;
    manifest
        .split(split)
        .map(|entry| {
            let pair = load_pair(entry, Some(resolution))?;
            let mut sample = to_sample(&pair, config.task);
            if config.ablation.use_multi_patch {
                let provider = provider.ok_or_else(|| {
                    Error::Usage("the multi-patch stage needs a region provider (fixture file or detector)".into())
                })?;
                let lb = pair.letterbox.expect("loaded with a resolution");
                let regions = provider.detect(&DetectQuery {
                    pair_id: &entry.pair_id,
                    image_path: &entry.photo,
                    dims: lb.source,
                })?;
                sample.regions = Some(lb.regions(&regions));
            }
            Ok(sample)
        })
        .collect()
}

/// Visiting order for one epoch; a pure function of seed and epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    order
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of fresh weights.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_curve: PathBuf,
    pub record: CheckpointRecord,
    pub steps: u64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn record_row(r: &StepRecord) -> Vec<String> {
    let mut row = vec![r.step.to_string(), r.epoch.to_string()];
    row.extend(r.values().iter().map(|v| v.to_string()));
    row
}

/// Rewrite the curve keeping only rows up to `max_step`.
fn truncate_curve(path: &Path, max_step: u64) -> Result<Vec<Vec<String>>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut keep = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let step: u64 = row.get(0).and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
        if step <= max_step {
            keep.push(row.iter().map(str::to_owned).collect());
        }
    }
    Ok(keep)
}

/// Run training over `samples`, writing checkpoints and the loss curve into
/// `out_dir`.
pub fn train_samples(
    samples: &[Sample],
    config: &TrainConfig,
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() && config.epochs > 0 {
        return Err(Error::Usage("no training pairs".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (mut model, start_epoch) = match &opts.resume {
        Some(path) => {
            let rec = CheckpointRecord::load(path)?;
            if rec.config_hash != config_hash(config) {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    message: "saved with a different configuration".into(),
                });
            }
            (rec.restore()?, rec.epoch)
        }
        None => (SketchGan::new(config.clone())?, 0),
    };

    let curve_path = out_dir.join(LOSS_CURVE);
    let kept = match opts.resume {
        Some(_) => truncate_curve(&curve_path, model.step)?,
        None => Vec::new(),
    };
    let file = File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
    let mut curve = csv::Writer::from_writer(file);
    curve
        .write_record(StepRecord::COLUMNS)
        .map_err(|e| csv_err(&curve_path, e))?;
    for row in kept {
        curve.write_record(&row).map_err(|e| csv_err(&curve_path, e))?;
    }
    curve.flush().map_err(|e| Error::io(&curve_path, e))?;

    for epoch in start_epoch..config.epochs {
        let order = epoch_order(samples.len(), config.seed, epoch);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let rec = model.train_step(&batch, epoch).inspect_err(|e| {
                log::error!("training aborted at epoch {epoch}: {e}");
            })?;
            curve
                .write_record(record_row(&rec))
                .map_err(|e| csv_err(&curve_path, e))?;
        }
        curve.flush().map_err(|e| Error::io(&curve_path, e))?;
        let done = epoch + 1;
        log::info!("epoch {done}/{} finished at step {}", config.epochs, model.step);
        if done % config.checkpoint_every == 0 {
            CheckpointRecord::capture(&model, done).save(&out_dir.join(epoch_checkpoint_name(done)))?;
        }
    }

    let record = CheckpointRecord::capture(&model, config.epochs.max(start_epoch));
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    record.save(&final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        loss_curve: curve_path,
        steps: model.step,
        record,
    })
}

/// Load the train split of `manifest` and run [`train_samples`].
pub fn train_run(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    out_dir: &Path,
    provider: Option<&dyn RegionProvider>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = prepare_samples(manifest, Split::Train, config, provider)?;
    log::info!(
        "training {} on {} pairs for {} epochs",
        config.task.name(),
        samples.len(),
        config.epochs
    );
    train_samples(&samples, config, out_dir, opts)
}

//! Two-stage training: per-part GANs, stitching, and the refinement GAN.
//!
//! One call to [`SketchGan::train_step`] performs, in order: for each of the
//! five parts a discriminator update followed by a generator update; the
//! stitch of the stage-1 outputs into an intact face (held constant
//! afterwards); a multi-scale discriminator update; a style classifier update
//! on real sketches when style supervision is active; and the refiner update.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attributes::Style;
use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{self, LossComponents, LossWeights, PerceptualExtractor, PerceptualSpec};
use crate::networks::{
    CoarseToFineGenerator, CoarseToFineSpec, EncoderDecoder, EncoderDecoderSpec, MultiScaleDiscriminator,
    MultiScaleDiscriminatorSpec, PatchDiscriminator, PatchDiscriminatorSpec, StyleClassifier, StyleClassifierSpec,
};
use crate::nn::{Initializer, Module, Param};
use crate::optim::{Adam, AdamConfig};
use crate::regions::{split_parts, stitch_parts, FaceRegions, Part, Parts, RegionConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    I2s,
    S2i,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::I2s => "i2s",
            Task::S2i => "s2i",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "i2s" => Ok(Task::I2s),
            "s2i" => Ok(Task::S2i),
            other => Err(Error::Config(format!("unknown task {other:?} (expected i2s or s2i)"))),
        }
    }

    /// `(input channels, output channels)`.
    pub fn channels(self) -> (usize, usize) {
        match self {
            Task::I2s => (3, 1),
            Task::S2i => (1, 3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_multi_patch: bool,
    pub use_style_vector: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_multi_patch: true,
            use_style_vector: true,
        }
    }
}

/// Network sizes and face geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square training resolution.
    pub resolution: usize,
    pub part_width: usize,
    pub refiner_width: usize,
    pub discriminator_width: usize,
    pub classifier_width: usize,
    pub scales: usize,
    pub perceptual: PerceptualSpec,
    pub regions: RegionConfig,
}

impl ModelConfig {
    pub fn new(resolution: usize, width: usize) -> Self {
        ModelConfig {
            resolution,
            part_width: width,
            refiner_width: width,
            discriminator_width: width,
            classifier_width: (width / 2).max(1),
            scales: 2,
            perceptual: PerceptualSpec::default(),
            regions: RegionConfig::for_resolution(resolution, 8),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(256, 64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub stage1_weights: LossWeights,
    pub stage2_weights: LossWeights,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub epochs: usize,
    /// Stage 1 stops updating from this 0-based epoch index onwards, i.e.
    /// after this many completed epochs.
    pub freeze_stage1_after: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

/// Published hyperparameters for `task`.
pub fn default_config(task: Task) -> TrainConfig {
    let (stage1, stage2, lr_d, epochs, freeze) = match task {
        Task::I2s => (
            LossWeights::new(25.0, 25.0, 12.5, 0.0),
            LossWeights::new(100.0, 100.0, 50.0, 100.0),
            1e-5,
            50,
            None,
        ),
        Task::S2i => (
            LossWeights::new(50.0, 50.0, 0.2, 0.0),
            LossWeights::new(100.0, 100.0, 0.2, 0.0),
            2e-4,
            400,
            Some(250),
        ),
    };
    TrainConfig {
        task,
        stage1_weights: stage1,
        stage2_weights: stage2,
        lr_generator: 2e-4,
        lr_discriminator: lr_d,
        epochs,
        freeze_stage1_after: freeze,
        batch_size: 1,
        seed: 0,
        ablation: Ablation::default(),
        checkpoint_every: 10,
        model: ModelConfig::default(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1_weights.validate()?;
        self.stage2_weights.validate()?;
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if let Some(f) = self.freeze_stage1_after {
            if f >= self.epochs {
                return Err(Error::Config(format!(
                    "freeze_stage1_after ({f}) must be below epochs ({})",
                    self.epochs
                )));
            }
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch_size and checkpoint_every must be positive".into()));
        }
        let m = &self.model;
        if m.part_width == 0 || m.refiner_width == 0 || m.discriminator_width == 0 || m.classifier_width == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if m.scales == 0 {
            return Err(Error::Config("at least one discriminator scale is required".into()));
        }
        let factor = 16;
        if m.resolution == 0 || !m.resolution.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "resolution {} must be a positive multiple of {factor}",
                m.resolution
            )));
        }
        m.regions.validate()?;
        for part in Part::KEY {
            let (w, h) = m.regions.window_size(part);
            if w % 8 != 0 || h % 8 != 0 || w > m.resolution || h > m.resolution {
                return Err(Error::Config(format!(
                    "{} window {w}x{h} must be a multiple of 8 and fit in {}",
                    part.name(),
                    m.resolution
                )));
            }
        }
        Ok(())
    }

    /// Whether the refiner is conditioned on the style label.
    pub fn style_conditioned(&self) -> bool {
        self.task == Task::I2s && self.ablation.use_style_vector
    }

    /// Stage-2 weights with style supervision removed when it cannot apply.
    pub fn effective_stage2_weights(&self) -> LossWeights {
        let mut w = self.stage2_weights;
        if !self.style_conditioned() {
            w.lambda_sty = 0.0;
        }
        w
    }

    pub fn stage1_frozen(&self, epoch: usize) -> bool {
        self.freeze_stage1_after.is_some_and(|f| epoch >= f)
    }
}

/// One training or inference example, already at training resolution.
#[derive(Clone, Debug)]
pub struct Sample {
    pub pair_id: String,
    /// Network input on the `[-1, 1]` scale.
    pub input: Image<f64>,
    /// Reference output on the `[-1, 1]` scale.
    pub target: Image<f64>,
    pub regions: Option<FaceRegions>,
    pub style: Style,
}

/// Scalar losses from one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean over parts; zero when stage 1 is absent or frozen.
    pub stage1_d: f64,
    pub stage1_g: f64,
    pub stage1_l1: f64,
    pub stage2_d: f64,
    pub stage2_g: f64,
    pub stage2: LossComponents,
    pub classifier: f64,
}

impl StepRecord {
    pub const COLUMNS: [&'static str; 13] = [
        "step",
        "epoch",
        "stage1_d",
        "stage1_g",
        "stage1_l1",
        "stage2_d",
        "stage2_g",
        "adv",
        "fm",
        "l1",
        "per",
        "sty",
        "classifier",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.stage1_d,
            self.stage1_g,
            self.stage1_l1,
            self.stage2_d,
            self.stage2_g,
            self.stage2.adv,
            self.stage2.fm,
            self.stage2.l1,
            self.stage2.per,
            self.stage2.sty,
            self.classifier,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct PartGan {
    pub generator: EncoderDecoder,
    pub discriminator: PatchDiscriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
}

#[derive(Debug, Clone)]
pub struct Stage1 {
    /// Indexed in [`Part::ALL`] order.
    pub parts: Vec<PartGan>,
}

impl Stage1 {
    pub fn part(&self, part: Part) -> &PartGan {
        &self.parts[part_index(part)]
    }
}

impl Module for Stage1 {
    fn params(&self) -> Vec<&Param> {
        self.parts
            .iter()
            .flat_map(|p| {
                let mut v = p.generator.params();
                v.extend(p.discriminator.params());
                v
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.parts
            .iter_mut()
            .flat_map(|p| {
                let mut v = p.generator.params_mut();
                v.extend(p.discriminator.params_mut());
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Stage2 {
    pub generator: CoarseToFineGenerator,
    pub discriminator: MultiScaleDiscriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub classifier: Option<(StyleClassifier, Adam)>,
}

impl Module for Stage2 {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.generator.params();
        v.extend(self.discriminator.params());
        if let Some((c, _)) = &self.classifier {
            v.extend(c.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.generator.params_mut();
        v.extend(self.discriminator.params_mut());
        if let Some((c, _)) = &mut self.classifier {
            v.extend(c.params_mut());
        }
        v
    }
}

fn part_index(part: Part) -> usize {
    Part::ALL.iter().position(|&p| p == part).expect("listed part")
}

/// Hex SHA-256 over every parameter's little-endian bytes.
pub fn parameter_hash<M: Module + ?Sized>(module: &M) -> String {
    let mut h = Sha256::new();
    for p in module.params() {
        h.update(p.value.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `adv + Σ λ·term`, skipping zero weights.
fn weighted_total(g: &mut Graph, adv: Var, terms: &[(f64, Option<Var>)]) -> Result<Var> {
    let mut items = alloc::vec![adv];
    for &(lambda, v) in terms {
        if let (true, Some(v)) = (lambda != 0.0, v) {
            items.push(g.scale(v, lambda));
        }
    }
    g.add_all(&items)
}

fn reject_grads<M: Module + ?Sized>(m: &M, grads: &Gradients, what: &str) -> Result<()> {
    if m.params().iter().any(|p| grads.param(p.id()).is_some()) {
        return Err(Error::State(format!("gradient reached {what}")));
    }
    Ok(())
}

fn stack_images(images: &[&Image<f64>]) -> Result<Tensor> {
    let ts: Vec<Tensor> = images.iter().map(|i| i.to_tensor()).collect();
    Tensor::stack(&ts)
}

/// Full model state: both stages, their optimizers and the step counter.
#[derive(Debug, Clone)]
pub struct SketchGan {
    pub config: TrainConfig,
    pub stage1: Option<Stage1>,
    pub stage2: Stage2,
    pub extractor: PerceptualExtractor,
    pub step: u64,
}

/// Refiner loss terms recorded on one tape.
#[derive(Clone, Copy, Debug)]
pub struct RefinerObjective {
    pub total: Var,
    pub adv: Var,
    pub fm: Var,
    pub l1: Var,
    pub per: Option<Var>,
    pub sty: Option<Var>,
}

impl RefinerObjective {
    pub fn components(&self, g: &Graph) -> LossComponents {
        LossComponents {
            adv: g.scalar(self.adv),
            fm: g.scalar(self.fm),
            l1: g.scalar(self.l1),
            per: self.per.map_or(0.0, |v| g.scalar(v)),
            sty: self.sty.map_or(0.0, |v| g.scalar(v)),
        }
    }
}

/// Refiner objective for output `out` of input `x` with reference `y`:
/// adversarial terms summed over scales, feature matching averaged over
/// scales, then L1, perceptual and style terms. Discriminator and classifier
/// parameters are bound untracked. Terms with a zero weight are skipped.
#[allow(clippy::too_many_arguments)]
pub fn refiner_objective(
    g: &mut Graph,
    discriminator: &MultiScaleDiscriminator,
    classifier: Option<&StyleClassifier>,
    extractor: &PerceptualExtractor,
    weights: &LossWeights,
    x: Var,
    y: Var,
    out: Var,
    labels: Option<&[u8]>,
) -> Result<RefinerObjective> {
    let real = discriminator.forward(g, x, y, false)?;
    let fake = discriminator.forward(g, x, out, false)?;
    let advs: Vec<Var> = fake
        .iter()
        .map(|f| losses::generator_adversarial(g, f.probability))
        .collect();
    let adv = g.add_all(&advs)?;
    let fms = real
        .iter()
        .zip(&fake)
        .map(|(r, f)| losses::feature_matching(g, &r.taps, &f.taps))
        .collect::<Result<Vec<_>>>()?;
    let fm_sum = g.add_all(&fms)?;
    let fm = g.scale(fm_sum, 1.0 / real.len() as f64);
    let l1 = losses::pixelwise(g, y, out)?;
    let per = match weights.lambda_per != 0.0 {
        true => Some(losses::perceptual(g, extractor, y, out)?),
        false => None,
    };
    let sty = match (classifier, labels, weights.lambda_sty != 0.0) {
        (Some(classifier), Some(labels), true) => {
            let probs = classifier.forward(g, out, false)?;
            Some(losses::style_classification(g, probs, labels)?)
        }
        _ => None,
    };
    let total = weighted_total(
        g,
        adv,
        &[
            (weights.lambda_fm, Some(fm)),
            (weights.lambda_1, Some(l1)),
            (weights.lambda_per, per),
            (weights.lambda_sty, sty),
        ],
    )?;
    Ok(RefinerObjective {
        total,
        adv,
        fm,
        l1,
        per,
        sty,
    })
}

impl SketchGan {
    /// Build every network from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(config.seed);
        let m = &config.model;
        let (cin, cout) = config.task.channels();
        let adam_g = AdamConfig::with_lr(config.lr_generator);
        let adam_d = AdamConfig::with_lr(config.lr_discriminator);
        let stage1 = config.ablation.use_multi_patch.then(|| Stage1 {
            parts: Part::ALL
                .iter()
                .map(|&part| {
                    let spec = match part {
                        Part::Rest => EncoderDecoderSpec::rest(cin, cout, m.part_width),
                        _ => EncoderDecoderSpec::component(cin, cout, m.part_width),
                    };
                    PartGan {
                        generator: EncoderDecoder::new(spec, &mut init),
                        discriminator: PatchDiscriminator::new(
                            PatchDiscriminatorSpec::new(cin, cout, m.discriminator_width),
                            &mut init,
                        ),
                        opt_g: Adam::new(adam_g),
                        opt_d: Adam::new(adam_d),
                    }
                })
                .collect(),
        });
        let refine_in = if config.ablation.use_multi_patch { cout } else { cin };
        let generator = CoarseToFineGenerator::new(
            CoarseToFineSpec::new(refine_in, cout, m.refiner_width, config.style_conditioned()),
            &mut init,
        );
        let discriminator = MultiScaleDiscriminator::new(
            MultiScaleDiscriminatorSpec {
                scales: m.scales,
                patch: PatchDiscriminatorSpec::new(cin, cout, m.discriminator_width),
            },
            &mut init,
        )?;
        let classifier = (config.effective_stage2_weights().lambda_sty != 0.0).then(|| {
            let c = StyleClassifier::new(
                StyleClassifierSpec {
                    in_channels: cout,
                    base_width: m.classifier_width,
                },
                &mut init,
            );
            (c, Adam::new(adam_d))
        });
        let extractor = PerceptualExtractor::new(m.perceptual);
        Ok(SketchGan {
            stage2: Stage2 {
                generator,
                discriminator,
                opt_g: Adam::new(adam_g),
                opt_d: Adam::new(adam_d),
                classifier,
            },
            stage1,
            extractor,
            step: 0,
            config,
        })
    }

    pub fn stage1_hash(&self) -> Option<String> {
        self.stage1.as_ref().map(parameter_hash)
    }

    pub fn stage2_hash(&self) -> String {
        parameter_hash(&self.stage2)
    }

    /// Hash over all trainable parameters of both stages.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        if let Some(s) = self.stage1_hash() {
            h.update(s.as_bytes());
        }
        h.update(self.stage2_hash().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_batch(&self, batch: &[Sample]) -> Result<()> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Invalid("empty training batch".into()))?;
        let (cin, cout) = self.config.task.channels();
        for s in batch {
            if s.input.channels() != cin || s.target.channels() != cout {
                return Err(Error::Dimension(format!(
                    "{}: {} task needs {cin}-channel input and {cout}-channel target, got {} and {}",
                    s.pair_id,
                    self.config.task.name(),
                    s.input.channels(),
                    s.target.channels()
                )));
            }
            if s.input.dims() != first.input.dims() || s.target.dims() != s.input.dims() {
                return Err(Error::Dimension(format!(
                    "{}: input {:?} and target {:?} must match the batch's {:?}",
                    s.pair_id,
                    s.input.dims(),
                    s.target.dims(),
                    first.input.dims()
                )));
            }
            if self.stage1.is_some() && s.regions.is_none() {
                return Err(Error::Region(format!("{}: no facial regions available", s.pair_id)));
            }
        }
        Ok(())
    }

    fn style_labels(&self, batch: &[Sample]) -> Option<Vec<u8>> {
        self.config
            .style_conditioned()
            .then(|| batch.iter().map(|s| s.style.label()).collect())
    }

    /// One alternating update over `batch` during 0-based `epoch`.
    pub fn train_step(&mut self, batch: &[Sample], epoch: usize) -> Result<StepRecord> {
        self.check_batch(batch)?;
        let mut record = StepRecord {
            step: self.step + 1,
            epoch,
            ..StepRecord::default()
        };
        let inputs: Vec<&Image<f64>> = batch.iter().map(|s| &s.input).collect();
        let x = stack_images(&inputs)?;
        let targets: Vec<&Image<f64>> = batch.iter().map(|s| &s.target).collect();
        let y = stack_images(&targets)?;

        let intact = match self.stage1.is_some() {
            true => self.stage1_step(batch, epoch, &mut record)?,
            false => x.clone(),
        };
        let labels = self.style_labels(batch);
        self.stage2_step(&x, &y, &intact, labels.as_deref(), &mut record)?;
        if !record.is_finite() {
            return Err(Error::NonFinite {
                step: record.step,
                what: format!("{record:?}"),
            });
        }
        self.step += 1;
        Ok(record)
    }

    /// Updates every part GAN (unless frozen) and returns the stitched face.
    fn stage1_step(&mut self, batch: &[Sample], epoch: usize, record: &mut StepRecord) -> Result<Tensor> {
        let frozen = self.config.stage1_frozen(epoch);
        let weights = self.config.stage1_weights;
        let region_cfg = self.config.model.regions.clone();
        let split = |img: &Image<f64>, s: &Sample| -> Result<Parts<f64>> {
            split_parts(img, s.regions.as_ref().expect("checked"), &region_cfg)
        };
        let in_parts: Vec<Parts<f64>> = batch.iter().map(|s| split(&s.input, s)).collect::<Result<_>>()?;
        let tgt_parts: Vec<Parts<f64>> = batch.iter().map(|s| split(&s.target, s)).collect::<Result<_>>()?;

        let mut outputs: Vec<Tensor> = Vec::with_capacity(Part::ALL.len());
        let stage1 = self.stage1.as_mut().expect("checked");
        for (i, &part) in Part::ALL.iter().enumerate() {
            let x = stack_images(&in_parts.iter().map(|p| p.get(part)).collect::<Vec<_>>())?;
            let y = stack_images(&tgt_parts.iter().map(|p| p.get(part)).collect::<Vec<_>>())?;
            let gan = &mut stage1.parts[i];
            if frozen {
                outputs.push(gan.generator.infer(&x)?);
                continue;
            }

            // Discriminator.
            let fake = gan.generator.infer(&x)?;
            let mut g = Graph::new();
            let (xv, yv, fv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(fake));
            let real = gan.discriminator.forward(&mut g, xv, yv, true)?;
            let fake_j = gan.discriminator.forward(&mut g, xv, fv, true)?;
            let d_loss = losses::discriminator_adversarial(&mut g, real.probability, fake_j.probability)?;
            let grads = g.backward(d_loss)?;
            gan.opt_d.step(&mut gan.discriminator, &grads)?;
            record.stage1_d += g.scalar(d_loss);

            // Generator.
            let mut g = Graph::new();
            let (xv, yv) = (g.constant(x), g.constant(y));
            let out = gan.generator.forward(&mut g, xv, true)?;
            let real = gan.discriminator.forward(&mut g, xv, yv, false)?;
            let fake_j = gan.discriminator.forward(&mut g, xv, out, false)?;
            let adv = losses::generator_adversarial(&mut g, fake_j.probability);
            let fm = losses::feature_matching(&mut g, &real.taps, &fake_j.taps)?;
            let l1 = losses::pixelwise(&mut g, yv, out)?;
            let per = match weights.lambda_per != 0.0 {
                true => Some(losses::perceptual(&mut g, &self.extractor, yv, out)?),
                false => None,
            };
            let total = weighted_total(
                &mut g,
                adv,
                &[
                    (weights.lambda_fm, Some(fm)),
                    (weights.lambda_1, Some(l1)),
                    (weights.lambda_per, per),
                ],
            )?;
            let grads = g.backward(total)?;
            if self.extractor.params().iter().any(|p| grads.param(p.id()).is_some()) {
                return Err(Error::State("gradient reached the perceptual extractor".into()));
            }
            gan.opt_g.step(&mut gan.generator, &grads)?;
            record.stage1_g += g.scalar(total);
            record.stage1_l1 += g.scalar(l1);
            outputs.push(g.value(out).clone());
        }
        if !frozen {
            let n = Part::ALL.len() as f64;
            record.stage1_d /= n;
            record.stage1_g /= n;
            record.stage1_l1 /= n;
        }
        stitch_batch(&outputs, batch, &region_cfg)
    }

    fn stage2_step(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        intact: &Tensor,
        labels: Option<&[u8]>,
        record: &mut StepRecord,
    ) -> Result<()> {
        let weights = self.config.effective_stage2_weights();
        let s2 = &mut self.stage2;

        // Multi-scale discriminator.
        let fake = s2.generator.infer(intact, labels)?;
        let mut g = Graph::new();
        let (xv, yv, fv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(fake));
        let real = s2.discriminator.forward(&mut g, xv, yv, true)?;
        let fake_j = s2.discriminator.forward(&mut g, xv, fv, true)?;
        let terms = real
            .iter()
            .zip(&fake_j)
            .map(|(r, f)| losses::discriminator_adversarial(&mut g, r.probability, f.probability))
            .collect::<Result<Vec<_>>>()?;
        let d_loss = g.add_all(&terms)?;
        let grads = g.backward(d_loss)?;
        s2.opt_d.step(&mut s2.discriminator, &grads)?;
        record.stage2_d = g.scalar(d_loss);

        // Style classifier on real references.
        if let (Some((classifier, opt)), Some(labels)) = (s2.classifier.as_mut(), labels) {
            let mut g = Graph::new();
            let yv = g.constant(y.clone());
            let probs = classifier.forward(&mut g, yv, true)?;
            let loss = losses::style_classification(&mut g, probs, labels)?;
            let grads = g.backward(loss)?;
            opt.step(classifier, &grads)?;
            record.classifier = g.scalar(loss);
        }

        // Refiner; the intact face enters as a constant.
        let mut g = Graph::new();
        let (xv, yv, iv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(intact.clone()));
        let out = s2.generator.forward(&mut g, iv, labels, true)?;
        let classifier = s2.classifier.as_ref().map(|(c, _)| c);
        let obj = refiner_objective(
            &mut g,
            &s2.discriminator,
            classifier,
            &self.extractor,
            &weights,
            xv,
            yv,
            out,
            labels,
        )?;
        let total = obj.total;
        let grads = g.backward(total)?;
        reject_grads(&self.extractor, &grads, "the perceptual extractor")?;
        if let Some(s1) = &self.stage1 {
            reject_grads(s1, &grads, "stage 1")?;
        }
        s2.opt_g.step(&mut s2.generator, &grads)?;
        record.stage2_g = g.scalar(total);
        record.stage2 = obj.components(&g);
        Ok(())
    }

    /// Full pipeline on one input: regions, stage-1 patches, stitch, refine.
    pub fn infer(&self, input: &Image<f64>, regions: Option<&FaceRegions>, style: Option<Style>) -> Result<Image<f64>> {
        let (cin, _) = self.config.task.channels();
        match (self.config.style_conditioned(), style) {
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "a style label was given but this {} model is not style-conditioned",
                    self.config.task.name()
                )))
            }
            (true, None) => return Err(Error::Config("this model needs a style label (1, 2 or 3)".into())),
            _ => {}
        }
        if input.channels() != cin {
            return Err(Error::Dimension(format!(
                "{} model expects {cin}-channel input, got {}",
                self.config.task.name(),
                input.channels()
            )));
        }
        let x = input.to_tensor();
        let intact = match &self.stage1 {
            Some(stage1) => {
                let regions = regions.ok_or_else(|| Error::Region("no facial regions for input".into()))?;
                let cfg = &self.config.model.regions;
                let parts = split_parts(input, regions, cfg)?;
                let outputs = Part::ALL
                    .iter()
                    .map(|&p| stage1.part(p).generator.infer(&parts.get(p).to_tensor()))
                    .collect::<Result<Vec<_>>>()?;
                let stitched = Parts::try_from_fn(|p| Ok::<_, Error>(Image::from_tensor(&outputs[part_index(p)], 0)))?;
                stitch_parts(&stitched, regions, cfg)?.to_tensor()
            }
            None => x,
        };
        let labels = style.map(|s| [s.label()]);
        let out = self.stage2.generator.infer(&intact, labels.as_ref().map(|l| &l[..]))?;
        Ok(Image::from_tensor(&out, 0))
    }

    /// Mean pixel-wise L1 of full-pipeline outputs against their targets.
    pub fn evaluate_l1(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Invalid("no samples to evaluate".into()));
        }
        let mut total = 0.0;
        for s in samples {
            let style = self.config.style_conditioned().then_some(s.style);
            let out = self.infer(&s.input, s.regions.as_ref(), style)?;
            total += losses::pixelwise_l1(&s.target.to_tensor(), &out.to_tensor())?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Every parameter and optimizer moment under a stable name.
    pub fn state_dict(&self) -> StateDict {
        let mut sd = StateDict::default();
        if let Some(s1) = &self.stage1 {
            for (part, gan) in Part::ALL.iter().zip(&s1.parts) {
                let base = format!("stage1.{}", part.name());
                sd.push_module(&format!("{base}.g"), &gan.generator);
                sd.push_module(&format!("{base}.d"), &gan.discriminator);
                sd.push_adam(&format!("{base}.opt_g"), &gan.opt_g);
                sd.push_adam(&format!("{base}.opt_d"), &gan.opt_d);
            }
        }
        let s2 = &self.stage2;
        sd.push_module("stage2.g", &s2.generator);
        sd.push_module("stage2.d", &s2.discriminator);
        sd.push_adam("stage2.opt_g", &s2.opt_g);
        sd.push_adam("stage2.opt_d", &s2.opt_d);
        if let Some((c, opt)) = &s2.classifier {
            sd.push_module("style.c", c);
            sd.push_adam("style.opt", opt);
        }
        sd.counters.push((String::from("step"), self.step));
        sd
    }

    /// Restore from [`SketchGan::state_dict`] output of an identically
    /// configured model.
    pub fn load_state_dict(&mut self, sd: &StateDict) -> Result<()> {
        let mut cursor = sd.reader();
        if let Some(s1) = &mut self.stage1 {
            for (part, gan) in Part::ALL.iter().zip(&mut s1.parts) {
                let base = format!("stage1.{}", part.name());
                cursor.load_module(&format!("{base}.g"), &mut gan.generator)?;
                cursor.load_module(&format!("{base}.d"), &mut gan.discriminator)?;
                cursor.load_adam(&format!("{base}.opt_g"), &mut gan.opt_g)?;
                cursor.load_adam(&format!("{base}.opt_d"), &mut gan.opt_d)?;
            }
        }
        let s2 = &mut self.stage2;
        cursor.load_module("stage2.g", &mut s2.generator)?;
        cursor.load_module("stage2.d", &mut s2.discriminator)?;
        cursor.load_adam("stage2.opt_g", &mut s2.opt_g)?;
        cursor.load_adam("stage2.opt_d", &mut s2.opt_d)?;
        if let Some((c, opt)) = &mut s2.classifier {
            cursor.load_module("style.c", c)?;
            cursor.load_adam("style.opt", opt)?;
        }
        self.step = sd.counter("step")?;
        if cursor.used != sd.tensors.len() {
            return Err(Error::State(format!(
                "state has {} tensors, model consumed {}",
                sd.tensors.len(),
                cursor.used
            )));
        }
        Ok(())
    }
}

fn stitch_batch(outputs: &[Tensor], batch: &[Sample], cfg: &RegionConfig) -> Result<Tensor> {
    let mut faces = Vec::with_capacity(batch.len());
    for (n, s) in batch.iter().enumerate() {
        let parts = Parts::try_from_fn(|p| Ok::<_, Error>(Image::from_tensor(&outputs[part_index(p)], n)))?;
        let face = stitch_parts(&parts, s.regions.as_ref().expect("checked"), cfg)?;
        faces.push(face.to_tensor());
    }
    Tensor::stack(&faces)
}

/// Named tensors and counters describing a [`SketchGan`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateDict {
    pub tensors: Vec<(String, Tensor)>,
    pub counters: Vec<(String, u64)>,
}

impl StateDict {
    fn push_module<M: Module + ?Sized>(&mut self, prefix: &str, m: &M) {
        for (i, p) in m.params().into_iter().enumerate() {
            self.tensors.push((format!("{prefix}.{i}"), p.value.clone()));
        }
    }

    fn push_adam(&mut self, prefix: &str, opt: &Adam) {
        let (steps, first, second) = opt.state();
        self.counters.push((format!("{prefix}.steps"), steps));
        for (i, t) in first.iter().enumerate() {
            self.tensors.push((format!("{prefix}.m.{i}"), t.clone()));
        }
        for (i, t) in second.iter().enumerate() {
            self.tensors.push((format!("{prefix}.v.{i}"), t.clone()));
        }
    }

    pub fn counter(&self, name: &str) -> Result<u64> {
        self.counters
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::State(format!("missing counter {name}")))
    }

    fn reader(&self) -> StateReader<'_> {
        StateReader { sd: self, used: 0 }
    }
}

struct StateReader<'a> {
    sd: &'a StateDict,
    used: usize,
}

impl StateReader<'_> {
    fn find(&self, name: &str) -> Option<&Tensor> {
        self.sd.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn load_module<M: Module + ?Sized>(&mut self, prefix: &str, m: &mut M) -> Result<()> {
        for (i, p) in m.params_mut().into_iter().enumerate() {
            let name = format!("{prefix}.{i}");
            let t = self
                .find(&name)
                .ok_or_else(|| Error::State(format!("missing tensor {name}")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::State(format!(
                    "{name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
            self.used += 1;
        }
        Ok(())
    }

    fn load_adam(&mut self, prefix: &str, opt: &mut Adam) -> Result<()> {
        let steps = self.sd.counter(&format!("{prefix}.steps"))?;
        let collect = |kind: &str| -> Vec<Tensor> {
            (0..)
                .map_while(|i| self.find(&format!("{prefix}.{kind}.{i}")).cloned())
                .collect()
        };
        let (first, second) = (collect("m"), collect("v"));
        self.used += first.len() + second.len();
        opt.restore(steps, first, second)
    }
}

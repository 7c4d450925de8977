//! Adversarial, feature-matching, perceptual, pixel-wise and style losses.
//!
//! Each loss comes in two forms: a tape form taking [`Var`]s, used during
//! training and gradient checks, and a plain form on tensors or scalars.
//! Per-layer L1 norms are elementwise means so the losses do not scale with
//! resolution.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::networks::STYLE_COUNT;
use crate::nn::{Conv2d, Initializer, Module, Param, WeightInit};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_1: f64,
    pub lambda_per: f64,
    pub lambda_sty: f64,
}

impl LossWeights {
    pub fn new(lambda_fm: f64, lambda_1: f64, lambda_per: f64, lambda_sty: f64) -> Self {
        LossWeights {
            lambda_fm,
            lambda_1,
            lambda_per,
            lambda_sty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_fm, self.lambda_1, self.lambda_per, self.lambda_sty];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted generator loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv: f64,
    pub fm: f64,
    pub l1: f64,
    pub per: f64,
    pub sty: f64,
}

/// `adv + λ_fm·fm + λ_1·l1 + λ_per·per + λ_sty·sty`. A zero weight drops its
/// term entirely, whatever the component's value.
pub fn generator_total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    let term = |lambda: f64, value: f64| if lambda == 0.0 { 0.0 } else { lambda * value };
    c.adv + term(w.lambda_fm, c.fm) + term(w.lambda_1, c.l1) + term(w.lambda_per, c.per) + term(w.lambda_sty, c.sty)
}

/// Sum of the per-scale discriminator terms.
pub fn discriminator_total_loss(per_scale: &[f64]) -> Result<f64> {
    if per_scale.is_empty() {
        return Err(Error::Invalid("discriminator loss needs at least one scale".into()));
    }
    Ok(per_scale.iter().sum())
}

/// `(loss for D, loss for G)` for one real and one fake probability.
///
/// D minimizes `-(log d_real + log(1 - d_fake))`; G uses the non-saturating
/// `-log d_fake`.
pub fn adversarial_loss(d_real: f64, d_fake: f64) -> (f64, f64) {
    let r = d_real.clamp(EPS, 1.0 - EPS);
    let f = d_fake.clamp(EPS, 1.0 - EPS);
    (-(libm::log(r) + libm::log(1.0 - f)), -libm::log(f))
}

/// Tape form of the discriminator term, averaged over the batch.
pub fn discriminator_adversarial(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let r = g.clamp(d_real, EPS, 1.0 - EPS);
    let log_r = g.log(r);
    let f = g.clamp(d_fake, EPS, 1.0 - EPS);
    let one_minus = g.affine(f, -1.0, 1.0);
    let log_f = g.log(one_minus);
    let s = g.add(log_r, log_f)?;
    let m = g.mean(s);
    Ok(g.scale(m, -1.0))
}

/// Tape form of the non-saturating generator term, averaged over the batch.
pub fn generator_adversarial(g: &mut Graph, d_fake: Var) -> Var {
    let f = g.clamp(d_fake, EPS, 1.0 - EPS);
    let l = g.log(f);
    let m = g.mean(l);
    g.scale(m, -1.0)
}

/// `Σ_i mean|real_i - fake_i|` over discriminator activations.
pub fn feature_matching(g: &mut Graph, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::shape(
            "feature_matching",
            format!("{} real vs {} fake layers", real.len(), fake.len()),
        ));
    }
    let terms = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| g.abs_diff_mean(r, f))
        .collect::<Result<Vec<_>>>()?;
    g.add_all(&terms)
}

pub fn feature_matching_loss(real: &[Tensor], fake: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let r: Vec<_> = real.iter().map(|t| g.constant(t.clone())).collect();
    let f: Vec<_> = fake.iter().map(|t| g.constant(t.clone())).collect();
    let v = feature_matching(&mut g, &r, &f)?;
    Ok(g.scalar(v))
}

/// Mean absolute difference over every element.
pub fn pixelwise(g: &mut Graph, target: Var, output: Var) -> Result<Var> {
    g.abs_diff_mean(target, output)
}

pub fn pixelwise_l1(target: &Tensor, output: &Tensor) -> Result<f64> {
    target.expect_same_shape(output, "pixelwise_l1")?;
    let total: f64 = target
        .data()
        .iter()
        .zip(output.data())
        .map(|(a, b)| libm::fabs(a - b))
        .sum();
    Ok(total / target.len() as f64)
}

fn label_indices(labels: &[u8]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if (1..=STYLE_COUNT as u8).contains(&l) {
                Ok(l as usize - 1)
            } else {
                Err(Error::StyleLabel(l))
            }
        })
        .collect()
}

/// Cross-entropy `-log p[c-1]` of `[N, 3, 1, 1]` probabilities, batch mean.
pub fn style_classification(g: &mut Graph, probs: Var, labels: &[u8]) -> Result<Var> {
    let idx = label_indices(labels)?;
    let p = g.pick(probs, &idx)?;
    let p = g.clamp(p, EPS, 1.0);
    let l = g.log(p);
    let m = g.mean(l);
    Ok(g.scale(m, -1.0))
}

pub fn style_classification_loss(probs: [f64; 3], label: u8) -> Result<f64> {
    let idx = label_indices(&[label])?[0];
    Ok(-libm::log(probs[idx].clamp(EPS, 1.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptualSpec {
    pub base_width: usize,
    pub convs_per_stage: usize,
    pub seed: u64,
}

impl Default for PerceptualSpec {
    fn default() -> Self {
        PerceptualSpec {
            base_width: 16,
            convs_per_stage: 2,
            seed: 0x5eed,
        }
    }
}

/// Frozen five-stage convolutional feature extractor; one tap at the end of
/// each stage. Its weights are never bound for gradient tracking.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    pub spec: PerceptualSpec,
    stages: Vec<Vec<Conv2d>>,
}

impl PerceptualExtractor {
    pub const STAGES: usize = 5;

    pub fn new(spec: PerceptualSpec) -> Self {
        let mut init = Initializer::new(spec.seed);
        let mut ch = 3;
        let stages = (0..Self::STAGES)
            .map(|s| {
                let out = spec.base_width << s.min(3);
                (0..spec.convs_per_stage)
                    .map(|_| {
                        let c = Conv2d::new(&mut init, WeightInit::He, ch, out, 3, 1, 1, true);
                        ch = out;
                        c
                    })
                    .collect()
            })
            .collect();
        PerceptualExtractor { spec, stages }
    }

    /// Stage-end activations. Single-channel inputs are replicated to RGB.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let mut y = match g.value(x).channels() {
            3 => x,
            1 => g.repeat_channels(x, 3),
            c => {
                return Err(Error::shape(
                    "perceptual_extractor",
                    format!("expected 1 or 3 channels, got {c}"),
                ))
            }
        };
        let mut taps = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                y = g.avg_pool2(y)?;
            }
            for conv in stage {
                let z = conv.forward(g, y, false)?;
                y = g.relu(z);
            }
            taps.push(y);
        }
        Ok(taps)
    }
}

impl Module for PerceptualExtractor {
    fn params(&self) -> Vec<&Param> {
        self.stages.iter().flat_map(|s| s.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stages.iter_mut().flat_map(|s| s.params_mut()).collect()
    }
}

/// `Σ_i mean|φ_i(target) - φ_i(output)|`.
pub fn perceptual(g: &mut Graph, extractor: &PerceptualExtractor, target: Var, output: Var) -> Result<Var> {
    let (a, b) = (g.value(target).shape(), g.value(output).shape());
    if a != b {
        return Err(Error::shape("perceptual", format!("{a:?} vs {b:?}")));
    }
    let ft = extractor.features(g, target)?;
    let fo = extractor.features(g, output)?;
    feature_matching(g, &ft, &fo)
}

pub fn perceptual_loss(extractor: &PerceptualExtractor, target: &Tensor, output: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(target.clone());
    let o = g.constant(output.clone());
    let v = perceptual(&mut g, extractor, t, o)?;
    Ok(g.scalar(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_closed_forms() {
        let (d, g) = adversarial_loss(0.5, 0.5);
        assert!((d - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - core::f64::consts::LN_2).abs() < 1e-12);
        let (d, _) = adversarial_loss(1.0 - EPS, EPS);
        assert!(d < 1e-6);
        // Saturated inputs stay finite.
        let (d, g) = adversarial_loss(0.0, 1.0);
        assert!(d.is_finite() && g.is_finite());
    }

    #[test]
    fn tape_and_plain_adversarial_agree() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::scalar(0.8));
        let f = g.constant(Tensor::scalar(0.3));
        let d = discriminator_adversarial(&mut g, r, f).unwrap();
        let gl = generator_adversarial(&mut g, f);
        let (pd, pg) = adversarial_loss(0.8, 0.3);
        assert!((g.scalar(d) - pd).abs() < 1e-15);
        assert!((g.scalar(gl) - pg).abs() < 1e-15);
    }

    #[test]
    fn feature_matching_constant_offset() {
        let a = [Tensor::full([1, 4, 3, 3], 1.0)];
        let b = [Tensor::full([1, 4, 3, 3], 3.0)];
        assert_eq!(feature_matching_loss(&a, &b).unwrap(), 2.0);
        assert_eq!(feature_matching_loss(&a, &a).unwrap(), 0.0);
        let c = [Tensor::full([1, 4, 2, 3], 3.0)];
        assert!(feature_matching_loss(&a, &c).is_err());
        assert!(feature_matching_loss(&a, &[]).is_err());
    }

    #[test]
    fn pixelwise_values() {
        let ones = Tensor::full([1, 3, 4, 4], 1.0);
        let zeros = Tensor::zeros([1, 3, 4, 4]);
        assert_eq!(pixelwise_l1(&ones, &zeros).unwrap(), 1.0);
        assert_eq!(pixelwise_l1(&ones, &ones).unwrap(), 0.0);
        assert!(pixelwise_l1(&ones, &Tensor::zeros([1, 1, 4, 4])).is_err());
    }

    #[test]
    fn style_loss_values() {
        let u = 1.0 / 3.0;
        for c in 1..=3 {
            let l = style_classification_loss([u, u, u], c).unwrap();
            assert!((l - libm::log(3.0)).abs() < 1e-12);
        }
        assert!(style_classification_loss([0.0, 1.0, 0.0], 2).unwrap().abs() < 1e-12);
        assert_eq!(style_classification_loss([u, u, u], 4), Err(Error::StyleLabel(4)));
    }

    #[test]
    fn total_losses() {
        let c = LossComponents {
            adv: 1.0,
            fm: 1.0,
            l1: 1.0,
            per: 1.0,
            sty: 1.0,
        };
        assert_eq!(
            generator_total_loss(&c, &LossWeights::new(100.0, 100.0, 50.0, 100.0)),
            351.0
        );
        assert_eq!(generator_total_loss(&c, &LossWeights::new(0.0, 0.0, 0.0, 0.0)), 1.0);
        let s2i = LossWeights::new(100.0, 100.0, 0.2, 0.0);
        let with_nan = LossComponents { sty: f64::NAN, ..c };
        assert_eq!(generator_total_loss(&with_nan, &s2i), generator_total_loss(&c, &s2i));
        assert_eq!(discriminator_total_loss(&[0.7]).unwrap(), 0.7);
        assert_eq!(discriminator_total_loss(&[0.7, 0.7]).unwrap(), 1.4);
        assert!(discriminator_total_loss(&[]).is_err());
    }

    #[test]
    fn perceptual_is_zero_on_identity_and_symmetric() {
        let ex = PerceptualExtractor::new(PerceptualSpec {
            base_width: 4,
            ..Default::default()
        });
        let mut init = Initializer::new(3);
        let a = init.normal([1, 3, 16, 16], 0.0, 0.5);
        let b = init.normal([1, 3, 16, 16], 0.0, 0.5);
        assert_eq!(perceptual_loss(&ex, &a, &a).unwrap(), 0.0);
        assert_eq!(
            perceptual_loss(&ex, &a, &b).unwrap(),
            perceptual_loss(&ex, &b, &a).unwrap()
        );
        assert!(perceptual_loss(&ex, &a, &init.normal([1, 3, 8, 8], 0.0, 1.0)).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(1.0, 1.0, 1.0, 0.0).validate().is_ok());
        assert!(LossWeights::new(-1.0, 1.0, 1.0, 0.0).validate().is_err());
    }
}

//! Central finite differences against the tape. Each check returns the worst
//! relative error it saw.

#![allow(dead_code)]

use facesketch_core::autograd::{Graph, Var};
use facesketch_core::losses::{self, LossWeights, PerceptualExtractor, PerceptualSpec};
use facesketch_core::networks::{
    CoarseToFineGenerator, CoarseToFineSpec, MultiScaleDiscriminator, MultiScaleDiscriminatorSpec,
    PatchDiscriminatorSpec, StyleClassifier, StyleClassifierSpec,
};
use facesketch_core::nn::{Initializer, Module};
use facesketch_core::tensor::{Shape, Tensor};
use facesketch_core::trainer::refiner_objective;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const TOL: f64 = 1e-3;
// The objectives are piecewise smooth (L1, leaky ReLU); larger steps straddle
// kinks in the full refiner objective.
pub const STEP: f64 = 1e-6;

pub fn random(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Worst relative error over `probes` elements of `x`, or all when `None`.
pub fn check_input(x: &Tensor, probes: Option<&[usize]>, f: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let out = f(&mut g, v);
    let grads = g.backward(out).unwrap();
    let analytic = grads.get(v).unwrap().clone();
    let all: Vec<usize> = (0..x.len()).collect();
    let probes = probes.unwrap_or(&all);
    let mut worst: f64 = 0.0;
    for &i in probes {
        let eval = |d: f64| {
            let mut xp = x.clone();
            xp.data_mut()[i] += d;
            let mut g = Graph::new();
            let v = g.constant(xp);
            let o = f(&mut g, v);
            g.scalar(o)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

pub fn spread(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0..len)).collect()
}

/// Both argument slots, each against a constant.
pub fn discriminator_adversarial() -> f64 {
    let logits = random([4, 1, 1, 1], 1, -2.0, 2.0);
    let real = check_input(&logits, None, |g, x| {
        let p = g.sigmoid(x);
        let c = g.constant(Tensor::full([4, 1, 1, 1], 0.6));
        losses::discriminator_adversarial(g, p, c).unwrap()
    });
    let fake = check_input(&logits, None, |g, x| {
        let p = g.sigmoid(x);
        let c = g.constant(Tensor::full([4, 1, 1, 1], 0.3));
        losses::discriminator_adversarial(g, c, p).unwrap()
    });
    real.max(fake)
}

pub fn generator_adversarial() -> f64 {
    let logits = random([3, 1, 1, 1], 2, -2.0, 2.0);
    check_input(&logits, None, |g, x| {
        let p = g.sigmoid(x);
        losses::generator_adversarial(g, p)
    })
}

pub fn feature_matching() -> f64 {
    let real = [random([2, 3, 8, 8], 3, -1.0, 1.0), random([2, 4, 4, 4], 4, -1.0, 1.0)];
    let fake0 = random([2, 3, 8, 8], 5, -1.0, 1.0);
    let fake1 = random([2, 4, 4, 4], 6, -1.0, 1.0);
    check_input(&fake0, None, |g, x| {
        let r: Vec<Var> = real.iter().map(|t| g.constant(t.clone())).collect();
        let f1 = g.constant(fake1.clone());
        let t = g.tanh(x);
        losses::feature_matching(g, &r, &[t, f1]).unwrap()
    })
}

pub fn pixelwise() -> f64 {
    let target = random([1, 3, 32, 32], 7, -1.0, 1.0);
    let out = random([1, 3, 32, 32], 8, -1.0, 1.0);
    check_input(&out, None, |g, x| {
        let t = g.constant(target.clone());
        losses::pixelwise(g, t, x).unwrap()
    })
}

pub fn perceptual() -> f64 {
    let extractor = PerceptualExtractor::new(PerceptualSpec {
        base_width: 2,
        ..PerceptualSpec::default()
    });
    let target = random([1, 1, 32, 32], 9, -1.0, 1.0);
    let out = random([1, 1, 32, 32], 10, -1.0, 1.0);
    let probes = spread(out.len(), 64, 11);
    check_input(&out, Some(&probes), |g, x| {
        let t = g.constant(target.clone());
        losses::perceptual(g, &extractor, t, x).unwrap()
    })
}

pub fn style_classification() -> f64 {
    let logits = random([3, 3, 1, 1], 12, -2.0, 2.0);
    check_input(&logits, None, |g, x| {
        let p = g.softmax(x);
        losses::style_classification(g, p, &[1, 3, 2]).unwrap()
    })
}

/// Every per-loss check by name.
pub fn loss_checks() -> Vec<(&'static str, f64)> {
    vec![
        ("discriminator adversarial", discriminator_adversarial()),
        ("generator adversarial", generator_adversarial()),
        ("feature matching", feature_matching()),
        ("pixelwise", pixelwise()),
        ("perceptual", perceptual()),
        ("style classification", style_classification()),
    ]
}

/// The stage-2 generator objective on a small styled refiner.
pub struct Refiner {
    generator: CoarseToFineGenerator,
    discriminator: MultiScaleDiscriminator,
    classifier: StyleClassifier,
    extractor: PerceptualExtractor,
    weights: LossWeights,
    x: Tensor,
    y: Tensor,
    intact: Tensor,
    labels: [u8; 2],
}

impl Refiner {
    pub fn new() -> Self {
        let mut init = Initializer::new(21);
        let width = 2;
        Refiner {
            generator: CoarseToFineGenerator::new(CoarseToFineSpec::new(1, 1, width, true), &mut init),
            discriminator: MultiScaleDiscriminator::new(
                MultiScaleDiscriminatorSpec {
                    scales: 2,
                    patch: PatchDiscriminatorSpec::new(3, 1, width),
                },
                &mut init,
            )
            .unwrap(),
            classifier: StyleClassifier::new(
                StyleClassifierSpec {
                    in_channels: 1,
                    base_width: width,
                },
                &mut init,
            ),
            extractor: PerceptualExtractor::new(PerceptualSpec {
                base_width: 2,
                ..PerceptualSpec::default()
            }),
            weights: LossWeights::new(100.0, 100.0, 50.0, 100.0),
            x: random([2, 3, 32, 32], 22, -1.0, 1.0),
            y: random([2, 1, 32, 32], 23, -1.0, 1.0),
            intact: random([2, 1, 32, 32], 24, -1.0, 1.0),
            labels: [2, 3],
        }
    }

    fn eval(&self, g: &mut Graph, track: bool) -> Var {
        let (x, y, i) = (
            g.constant(self.x.clone()),
            g.constant(self.y.clone()),
            g.constant(self.intact.clone()),
        );
        let out = self.generator.forward(g, i, Some(&self.labels), track).unwrap();
        refiner_objective(
            g,
            &self.discriminator,
            Some(&self.classifier),
            &self.extractor,
            &self.weights,
            x,
            y,
            out,
            Some(&self.labels),
        )
        .unwrap()
        .total
    }

    /// Worst relative error and the number of parameter elements probed:
    /// two in each of the first, last and a spread of interior tensors.
    pub fn check(&mut self) -> (f64, usize) {
        let mut g = Graph::new();
        let total = self.eval(&mut g, true);
        assert!(g.scalar(total).is_finite());
        let grads = g.backward(total).unwrap();
        let analytic: Vec<Tensor> = self
            .generator
            .params()
            .iter()
            .map(|p| grads.param(p.id()).expect("every generator parameter is tracked"))
            .collect();
        let n_params = analytic.len();
        let picks: Vec<usize> = (0..n_params)
            .step_by((n_params / 12).max(1))
            .chain([n_params - 1])
            .collect();
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (k, &pi) in picks.iter().enumerate() {
            for &e in &spread(analytic[pi].len(), 2, 100 + k as u64) {
                let mut eval = |d: f64| {
                    self.generator.params_mut()[pi].value.data_mut()[e] += d;
                    let mut g = Graph::new();
                    let v = self.eval(&mut g, false);
                    let s = g.scalar(v);
                    self.generator.params_mut()[pi].value.data_mut()[e] -= d;
                    s
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic[pi].data()[e], numeric));
                checked += 1;
            }
        }
        (worst, checked)
    }
}

//! Generators, discriminators and the style classifier.
//!
//! Stage 1 uses one [`EncoderDecoder`] per facial part (three down/up blocks
//! for the eyes, nose and mouth, four for the rest of the face) judged by a
//! [`PatchDiscriminator`]. Stage 2 refines the stitched face with a
//! [`CoarseToFineGenerator`] judged by a [`MultiScaleDiscriminator`], and in
//! the image-to-sketch direction a [`StyleClassifier`] supervises the style.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{self, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bottleneck, Conv2d, ConvBnRelu, DeconvBnRelu, Initializer, Module, Param, WeightInit};
use crate::tensor::Tensor;

/// Number of artist styles.
pub const STYLE_COUNT: usize = 3;

const LEAKY_SLOPE: f64 = 0.2;

fn check_divisible(op: &str, h: usize, w: usize, factor: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "{op}: input {h}x{w} must be a positive multiple of {factor}"
        )));
    }
    Ok(())
}

/// Encoder-decoder generator layout shared by the stage-1 part generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDecoderSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    /// Stride-2 encoder blocks; the decoder mirrors them.
    pub depth: usize,
    pub residual_blocks: usize,
}

impl EncoderDecoderSpec {
    /// Eye, nose and mouth generator: three down/up blocks, nine bottlenecks.
    pub fn component(in_channels: usize, out_channels: usize, base_width: usize) -> Self {
        EncoderDecoderSpec {
            in_channels,
            out_channels,
            base_width,
            depth: 3,
            residual_blocks: 9,
        }
    }

    /// Generator for the remainder of the face: four down/up blocks.
    pub fn rest(in_channels: usize, out_channels: usize, base_width: usize) -> Self {
        EncoderDecoderSpec {
            depth: 4,
            ..Self::component(in_channels, out_channels, base_width)
        }
    }

    pub fn size_factor(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    pub spec: EncoderDecoderSpec,
    encoder: Vec<ConvBnRelu>,
    bottleneck: Vec<Bottleneck>,
    decoder: Vec<DeconvBnRelu>,
    head: Conv2d,
}

impl EncoderDecoder {
    pub fn new(spec: EncoderDecoderSpec, init: &mut Initializer) -> Self {
        let w = spec.base_width;
        let mut encoder = Vec::with_capacity(spec.depth);
        let mut ch = spec.in_channels;
        for i in 0..spec.depth {
            let out = w << i;
            encoder.push(ConvBnRelu::new(init, ch, out, 3, 2));
            ch = out;
        }
        let bottleneck = (0..spec.residual_blocks).map(|_| Bottleneck::new(init, ch)).collect();
        let mut decoder = Vec::with_capacity(spec.depth);
        for i in (0..spec.depth).rev() {
            let out = if i == 0 { w } else { w << (i - 1) };
            decoder.push(DeconvBnRelu::new(init, ch, out));
            ch = out;
        }
        let head = Conv2d::new(init, WeightInit::Gan, ch, spec.out_channels, 3, 1, 1, true);
        EncoderDecoder {
            spec,
            encoder,
            bottleneck,
            decoder,
            head,
        }
    }

    /// Innermost latent after the encoder and bottleneck trunk.
    pub fn encode(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let s = g.value(x).shape();
        if s[1] != self.spec.in_channels {
            return Err(Error::shape(
                "encoder_decoder",
                format!("expected {} input channels, got {}", self.spec.in_channels, s[1]),
            ));
        }
        check_divisible("encoder_decoder", s[2], s[3], self.spec.size_factor())?;
        let mut y = x;
        for block in &self.encoder {
            y = block.forward(g, y, track)?;
        }
        for block in &self.bottleneck {
            y = block.forward(g, y, track)?;
        }
        Ok(y)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let mut y = self.encode(g, x, track)?;
        for block in &self.decoder {
            y = block.forward(g, y, track)?;
        }
        let y = self.head.forward(g, y, track)?;
        Ok(g.tanh(y))
    }

    /// Forward pass on plain tensors, no gradient tracking.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let y = self.forward(&mut g, v, false)?;
        Ok(g.value(y).clone())
    }
}

impl Module for EncoderDecoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.bottleneck.params());
        v.extend(self.decoder.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.bottleneck.params_mut());
        v.extend(self.decoder.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDiscriminatorSpec {
    /// Channels of the conditioning image plus the judged image.
    pub in_channels: usize,
    pub base_width: usize,
    pub layers: usize,
}

impl PatchDiscriminatorSpec {
    pub fn new(condition_channels: usize, candidate_channels: usize, base_width: usize) -> Self {
        PatchDiscriminatorSpec {
            in_channels: condition_channels + candidate_channels,
            base_width,
            layers: 3,
        }
    }
}

/// Probability that the candidate is real, and the intermediate activations.
#[derive(Debug, Clone)]
pub struct Judgement {
    pub probability: Var,
    pub taps: Vec<Var>,
}

/// Stride-2 convolutions, global average pooling, 1x1 convolution, sigmoid.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    pub spec: PatchDiscriminatorSpec,
    layers: Vec<Conv2d>,
    classifier: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(spec: PatchDiscriminatorSpec, init: &mut Initializer) -> Self {
        let mut ch = spec.in_channels;
        let mut layers = Vec::with_capacity(spec.layers);
        for i in 0..spec.layers {
            let out = spec.base_width << i;
            layers.push(Conv2d::new(init, WeightInit::Gan, ch, out, 3, 2, 1, true));
            ch = out;
        }
        let classifier = Conv2d::new(init, WeightInit::Gan, ch, 1, 1, 1, 0, true);
        PatchDiscriminator {
            spec,
            layers,
            classifier,
        }
    }

    pub fn forward(&self, g: &mut Graph, condition: Var, candidate: Var, track: bool) -> Result<Judgement> {
        let (a, b) = (g.value(condition).shape(), g.value(candidate).shape());
        if a[0] != b[0] || a[2..] != b[2..] {
            return Err(Error::shape(
                "patch_discriminator",
                format!("condition {a:?} vs candidate {b:?}"),
            ));
        }
        if a[1] + b[1] != self.spec.in_channels {
            return Err(Error::shape(
                "patch_discriminator",
                format!(
                    "expected {} stacked channels, got {}",
                    self.spec.in_channels,
                    a[1] + b[1]
                ),
            ));
        }
        let mut y = g.concat(&[condition, candidate])?;
        let mut taps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.forward(g, y, track)?;
            y = g.leaky_relu(z, LEAKY_SLOPE);
            taps.push(y);
        }
        let pooled = g.global_avg_pool(y);
        let logit = self.classifier.forward(g, pooled, track)?;
        let probability = g.sigmoid(logit);
        Ok(Judgement { probability, taps })
    }

    /// Plain-tensor evaluation: `(probabilities, taps)`.
    pub fn infer(&self, condition: &Tensor, candidate: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut g = Graph::new();
        let c = g.constant(condition.clone());
        let d = g.constant(candidate.clone());
        let j = self.forward(&mut g, c, d, false)?;
        let taps = j.taps.iter().map(|&t| g.value(t).clone()).collect();
        Ok((g.value(j.probability).clone(), taps))
    }
}

impl Module for PatchDiscriminator {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.layers.params();
        v.extend(self.classifier.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layers.params_mut();
        v.extend(self.classifier.params_mut());
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiScaleDiscriminatorSpec {
    pub scales: usize,
    pub patch: PatchDiscriminatorSpec,
}

/// `scales` patch discriminators; the k-th sees both inputs halved k times.
#[derive(Debug, Clone)]
pub struct MultiScaleDiscriminator {
    pub spec: MultiScaleDiscriminatorSpec,
    discriminators: Vec<PatchDiscriminator>,
}

impl MultiScaleDiscriminator {
    pub fn new(spec: MultiScaleDiscriminatorSpec, init: &mut Initializer) -> Result<Self> {
        if spec.scales == 0 {
            return Err(Error::Config(
                "multi-scale discriminator needs at least one scale".into(),
            ));
        }
        let discriminators = (0..spec.scales)
            .map(|_| PatchDiscriminator::new(spec.patch, init))
            .collect();
        Ok(MultiScaleDiscriminator { spec, discriminators })
    }

    pub fn forward(&self, g: &mut Graph, condition: Var, candidate: Var, track: bool) -> Result<Vec<Judgement>> {
        let (a, b) = (g.value(condition).shape(), g.value(candidate).shape());
        if a[0] != b[0] || a[2..] != b[2..] {
            return Err(Error::shape(
                "multiscale_discriminate",
                format!("condition {a:?} vs candidate {b:?}"),
            ));
        }
        let (mut c, mut d) = (condition, candidate);
        let mut out = Vec::with_capacity(self.discriminators.len());
        for (k, disc) in self.discriminators.iter().enumerate() {
            if k > 0 {
                c = g.avg_pool2(c)?;
                d = g.avg_pool2(d)?;
            }
            out.push(disc.forward(g, c, d, track)?);
        }
        Ok(out)
    }

    pub fn scale(&self, k: usize) -> &PatchDiscriminator {
        &self.discriminators[k]
    }
}

impl Module for MultiScaleDiscriminator {
    fn params(&self) -> Vec<&Param> {
        self.discriminators.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.discriminators.params_mut()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseToFineSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    /// Stride-2 blocks inside the global sub-network.
    pub global_depth: usize,
    pub global_blocks: usize,
    pub local_blocks: usize,
    /// Whether a style map joins the fusion (image-to-sketch only).
    pub style_conditioned: bool,
}

impl CoarseToFineSpec {
    pub fn new(in_channels: usize, out_channels: usize, base_width: usize, style_conditioned: bool) -> Self {
        CoarseToFineSpec {
            in_channels,
            out_channels,
            base_width,
            global_depth: 3,
            global_blocks: 9,
            local_blocks: 3,
            style_conditioned,
        }
    }

    /// Full-resolution inputs must be multiples of this.
    pub fn size_factor(&self) -> usize {
        2 << self.global_depth
    }
}

/// Global sub-network on the half-resolution input, local sub-network on the
/// full-resolution input, fused at the local encoder's latent.
#[derive(Debug, Clone)]
pub struct CoarseToFineGenerator {
    pub spec: CoarseToFineSpec,
    global_stem: ConvBnRelu,
    global_down: Vec<ConvBnRelu>,
    global_trunk: Vec<Bottleneck>,
    global_up: Vec<DeconvBnRelu>,
    local_stem: ConvBnRelu,
    local_down: ConvBnRelu,
    fuse: Conv2d,
    local_trunk: Vec<Bottleneck>,
    local_up: DeconvBnRelu,
    head: Conv2d,
}

impl CoarseToFineGenerator {
    pub fn new(spec: CoarseToFineSpec, init: &mut Initializer) -> Self {
        let w = spec.base_width;
        let global_stem = ConvBnRelu::new(init, spec.in_channels, w, 3, 1);
        let global_down = (0..spec.global_depth)
            .map(|i| ConvBnRelu::new(init, w << i, w << (i + 1), 3, 2))
            .collect();
        let inner = w << spec.global_depth;
        let global_trunk = (0..spec.global_blocks).map(|_| Bottleneck::new(init, inner)).collect();
        let global_up = (0..spec.global_depth)
            .rev()
            .map(|i| DeconvBnRelu::new(init, w << (i + 1), w << i))
            .collect();
        let local_stem = ConvBnRelu::new(init, spec.in_channels, w, 3, 1);
        let local_down = ConvBnRelu::new(init, w, w, 3, 2);
        let fuse_in = w + if spec.style_conditioned { STYLE_COUNT } else { 0 };
        let fuse = Conv2d::new(init, WeightInit::Gan, fuse_in, w, 1, 1, 0, true);
        let local_trunk = (0..spec.local_blocks).map(|_| Bottleneck::new(init, w)).collect();
        let local_up = DeconvBnRelu::new(init, w, w);
        let head = Conv2d::new(init, WeightInit::Gan, w, spec.out_channels, 3, 1, 1, true);
        CoarseToFineGenerator {
            spec,
            global_stem,
            global_down,
            global_trunk,
            global_up,
            local_stem,
            local_down,
            fuse,
            local_trunk,
            local_up,
            head,
        }
    }

    /// Refine `intact` (full resolution). `styles` carries one label per
    /// sample and must be present exactly when the network is style-conditioned.
    pub fn forward(&self, g: &mut Graph, intact: Var, styles: Option<&[u8]>, track: bool) -> Result<Var> {
        let s = g.value(intact).shape();
        match (self.spec.style_conditioned, styles) {
            (false, Some(_)) => {
                return Err(Error::Config(
                    "style labels supplied to a refiner without style conditioning".into(),
                ))
            }
            (true, None) => return Err(Error::Config("style-conditioned refiner needs style labels".into())),
            (true, Some(labels)) if labels.len() != s[0] => {
                return Err(Error::Config(format!(
                    "{} style labels for a batch of {}",
                    labels.len(),
                    s[0]
                )))
            }
            _ => {}
        }
        if s[1] != self.spec.in_channels {
            return Err(Error::shape(
                "refine",
                format!("expected {} channels, got {}", self.spec.in_channels, s[1]),
            ));
        }
        check_divisible("refine", s[2], s[3], self.spec.size_factor())?;

        // Global branch at half resolution.
        let half = g.avg_pool2(intact)?;
        let mut y = self.global_stem.forward(g, half, track)?;
        for block in &self.global_down {
            y = block.forward(g, y, track)?;
        }
        for block in &self.global_trunk {
            y = block.forward(g, y, track)?;
        }
        for block in &self.global_up {
            y = block.forward(g, y, track)?;
        }

        // Local encoder latent, also at half resolution.
        let l = self.local_stem.forward(g, intact, track)?;
        let latent = self.local_down.forward(g, l, track)?;

        let fused_in = match styles {
            Some(labels) => {
                let (h, w) = g.value(y).dims();
                let map = expand_style_batch(labels, (h, w))?;
                let map = g.constant(map);
                g.concat(&[y, map])?
            }
            None => y,
        };
        let projected = self.fuse.forward(g, fused_in, track)?;
        let mut z = g.add(projected, latent)?;
        for block in &self.local_trunk {
            z = block.forward(g, z, track)?;
        }
        let z = self.local_up.forward(g, z, track)?;
        let z = self.head.forward(g, z, track)?;
        Ok(g.tanh(z))
    }

    pub fn infer(&self, intact: &Tensor, styles: Option<&[u8]>) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.constant(intact.clone());
        let y = self.forward(&mut g, v, styles, false)?;
        Ok(g.value(y).clone())
    }
}

impl Module for CoarseToFineGenerator {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.global_stem.params();
        v.extend(self.global_down.params());
        v.extend(self.global_trunk.params());
        v.extend(self.global_up.params());
        v.extend(self.local_stem.params());
        v.extend(self.local_down.params());
        v.extend(self.fuse.params());
        v.extend(self.local_trunk.params());
        v.extend(self.local_up.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.global_stem.params_mut();
        v.extend(self.global_down.params_mut());
        v.extend(self.global_trunk.params_mut());
        v.extend(self.global_up.params_mut());
        v.extend(self.local_stem.params_mut());
        v.extend(self.local_down.params_mut());
        v.extend(self.fuse.params_mut());
        v.extend(self.local_trunk.params_mut());
        v.extend(self.local_up.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleClassifierSpec {
    pub in_channels: usize,
    pub base_width: usize,
}

/// Small convolutional classifier over the three artist styles.
#[derive(Debug, Clone)]
pub struct StyleClassifier {
    pub spec: StyleClassifierSpec,
    layers: Vec<Conv2d>,
    head: Conv2d,
}

impl StyleClassifier {
    pub fn new(spec: StyleClassifierSpec, init: &mut Initializer) -> Self {
        let mut ch = spec.in_channels;
        let layers = (0..3)
            .map(|i| {
                let out = spec.base_width << i;
                let c = Conv2d::new(init, WeightInit::Gan, ch, out, 3, 2, 1, true);
                ch = out;
                c
            })
            .collect();
        let head = Conv2d::new(init, WeightInit::Gan, ch, STYLE_COUNT, 1, 1, 0, true);
        StyleClassifier { spec, layers, head }
    }

    /// Unnormalized scores, `[N, 3, 1, 1]`.
    pub fn logits(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let mut y = x;
        for layer in &self.layers {
            let z = layer.forward(g, y, track)?;
            y = g.leaky_relu(z, LEAKY_SLOPE);
        }
        let pooled = g.global_avg_pool(y);
        self.head.forward(g, pooled, track)
    }

    /// Style probabilities, `[N, 3, 1, 1]`, each row on the simplex.
    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let logits = self.logits(g, x, track)?;
        Ok(g.softmax(logits))
    }

    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let p = self.forward(&mut g, v, false)?;
        Ok(g.value(p).clone())
    }
}

impl Module for StyleClassifier {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.layers.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layers.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

/// One-hot style map `[1, 3, H, W]`: channel `label - 1` is all ones.
pub fn expand_style(label: u8, dims: (usize, usize)) -> Result<Tensor> {
    expand_style_batch(&[label], dims)
}

/// [`expand_style`] for a batch of labels, `[N, 3, H, W]`.
pub fn expand_style_batch(labels: &[u8], dims: (usize, usize)) -> Result<Tensor> {
    for &l in labels {
        if !(1..=STYLE_COUNT as u8).contains(&l) {
            return Err(Error::StyleLabel(l));
        }
    }
    Ok(Tensor::from_fn(
        [labels.len(), STYLE_COUNT, dims.0, dims.1],
        |[n, c, _, _]| if c + 1 == labels[n] as usize { 1.0 } else { 0.0 },
    ))
}

/// Halve the resolution by 2x2 averaging; odd trailing rows/columns drop.
pub fn downsample_half(image: &Tensor) -> Result<Tensor> {
    autograd::avg_pool2(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(shape: [usize; 4], seed: u64) -> Tensor {
        Initializer::new(seed).normal(shape, 0.0, 0.5)
    }

    #[test]
    fn component_generator_preserves_size() {
        let gen = EncoderDecoder::new(EncoderDecoderSpec::component(3, 1, 4), &mut Initializer::new(1));
        let y = gen.infer(&input([1, 3, 32, 32], 2)).unwrap();
        assert_eq!(y.shape(), [1, 1, 32, 32]);
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        let err = gen.infer(&input([1, 3, 34, 34], 2)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn rest_generator_latent_is_sixteen_times_smaller() {
        let gen = EncoderDecoder::new(EncoderDecoderSpec::rest(3, 3, 2), &mut Initializer::new(3));
        let mut g = Graph::new();
        let x = g.constant(input([1, 3, 64, 48], 4));
        let z = gen.encode(&mut g, x, false).unwrap();
        assert_eq!(g.value(z).dims(), (4, 3));
        let y = gen.forward(&mut g, x, false).unwrap();
        assert_eq!(g.value(y).shape(), [1, 3, 64, 48]);
        assert!(gen.infer(&input([1, 3, 24, 24], 5)).is_err());
    }

    #[test]
    fn patch_discriminator_probability_and_taps() {
        let d = PatchDiscriminator::new(PatchDiscriminatorSpec::new(3, 1, 4), &mut Initializer::new(6));
        let (p, taps) = d.infer(&input([2, 3, 16, 16], 7), &input([2, 1, 16, 16], 8)).unwrap();
        assert_eq!(p.shape(), [2, 1, 1, 1]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let dims: Vec<_> = taps.iter().map(Tensor::dims).collect();
        assert_eq!(dims, [(8, 8), (4, 4), (2, 2)]);
        assert!(d.infer(&input([1, 3, 16, 16], 7), &input([1, 1, 8, 8], 8)).is_err());
    }

    #[test]
    fn multiscale_entries_halve() {
        let spec = MultiScaleDiscriminatorSpec {
            scales: 2,
            patch: PatchDiscriminatorSpec::new(1, 3, 4),
        };
        let d = MultiScaleDiscriminator::new(spec, &mut Initializer::new(9)).unwrap();
        let mut g = Graph::new();
        let c = g.constant(input([1, 1, 32, 32], 10));
        let x = g.constant(input([1, 3, 32, 32], 11));
        let out = d.forward(&mut g, c, x, false).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(g.value(out[0].taps[0]).dims(), (16, 16));
        assert_eq!(g.value(out[1].taps[0]).dims(), (8, 8));
        let zero = MultiScaleDiscriminatorSpec { scales: 0, ..spec };
        assert!(MultiScaleDiscriminator::new(zero, &mut Initializer::new(9)).is_err());
    }

    #[test]
    fn refiner_shape_and_style_contract() {
        let spec = CoarseToFineSpec::new(1, 1, 4, true);
        let gen = CoarseToFineGenerator::new(spec, &mut Initializer::new(12));
        let x = input([1, 1, 32, 32], 13);
        assert_eq!(gen.infer(&x, Some(&[1])).unwrap().shape(), [1, 1, 32, 32]);
        assert!(gen.infer(&x, None).is_err());

        let plain = CoarseToFineGenerator::new(CoarseToFineSpec::new(1, 3, 4, false), &mut Initializer::new(12));
        assert_eq!(plain.infer(&x, None).unwrap().shape(), [1, 3, 32, 32]);
        assert!(matches!(plain.infer(&x, Some(&[2])), Err(Error::Config(_))));
    }

    #[test]
    fn expand_style_is_one_hot() {
        let m = expand_style(2, (4, 4)).unwrap();
        assert_eq!(m.shape(), [1, 3, 4, 4]);
        assert!(m.plane(0, 1).iter().all(|&v| v == 1.0));
        assert!(m.plane(0, 0).iter().chain(m.plane(0, 2)).all(|&v| v == 0.0));
        assert_eq!(expand_style(4, (4, 4)), Err(Error::StyleLabel(4)));
        assert_eq!(expand_style(0, (4, 4)), Err(Error::StyleLabel(0)));
    }

    #[test]
    fn downsample_half_floors_and_preserves_constants() {
        let t = Tensor::full([1, 1, 513, 513], 0.25);
        let d = downsample_half(&t).unwrap();
        assert_eq!(d.dims(), (256, 256));
        assert!(d.data().iter().all(|&v| v == 0.25));
        assert_eq!(
            downsample_half(&Tensor::zeros([1, 3, 512, 512])).unwrap().dims(),
            (256, 256)
        );
    }

    #[test]
    fn style_classifier_outputs_simplex() {
        let s = StyleClassifier::new(
            StyleClassifierSpec {
                in_channels: 1,
                base_width: 4,
            },
            &mut Initializer::new(14),
        );
        let p = s.classify(&input([3, 1, 16, 16], 15)).unwrap();
        assert_eq!(p.shape(), [3, 3, 1, 1]);
        for n in 0..3 {
            let row: f64 = (0..3).map(|c| p.at([n, c, 0, 0])).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
        assert_eq!(p, s.classify(&input([3, 1, 16, 16], 15)).unwrap());
    }
}

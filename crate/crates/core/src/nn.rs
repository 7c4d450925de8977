//! Trainable parameters and the basic layers the networks are assembled from.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Shape, Tensor};

static NEXT_PARAM: AtomicUsize = AtomicUsize::new(0);

/// Process-unique identity of a parameter, used to route gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

#[derive(Debug)]
pub struct Param {
    id: ParamId,
    pub value: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param {
            id: ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed)),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }
}

impl Clone for Param {
    /// Clones get a fresh id so two copies never alias on one tape.
    fn clone(&self) -> Self {
        Param::new(self.value.clone())
    }
}

/// Anything that owns parameters, enumerated in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

impl<M: Module> Module for Vec<M> {
    fn params(&self) -> Vec<&Param> {
        self.iter().flat_map(Module::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().flat_map(Module::params_mut).collect()
    }
}

/// Seeded source of initial weights.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: Shape, mean: f64, std: f64) -> Tensor {
        let dist = Normal::new(mean, std).expect("finite std");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng))
    }
}

/// Weight initialization scheme for a convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    /// `N(0, 0.02)`, the usual choice for adversarial image translators.
    Gan,
    /// `N(0, sqrt(2 / fan_in))`.
    He,
}

impl WeightInit {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            WeightInit::Gan => 0.02,
            WeightInit::He => libm::sqrt(2.0 / fan_in as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Initializer,
        scheme: WeightInit,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let std = scheme.std(in_ch * kernel * kernel);
        Conv2d {
            weight: Param::new(init.normal([out_ch, in_ch, kernel, kernel], 0.0, std)),
            bias: bias.then(|| Param::new(Tensor::zeros([1, out_ch, 1, 1]))),
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let w = g.param(&self.weight, track);
        let b = self.bias.as_ref().map(|b| g.param(b, track));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        core::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        core::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Stride-2 transposed convolution that exactly doubles spatial size
/// (kernel 3, padding 1, output padding 1).
#[derive(Debug, Clone)]
pub struct Upsample2 {
    pub weight: Param,
}

impl Upsample2 {
    pub fn new(init: &mut Initializer, in_ch: usize, out_ch: usize) -> Self {
        Upsample2 {
            weight: Param::new(init.normal([in_ch, out_ch, 3, 3], 0.0, 0.02)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let w = g.param(&self.weight, track);
        g.conv_transpose2d(x, w, None, 2, 1, 1)
    }
}

impl Module for Upsample2 {
    fn params(&self) -> Vec<&Param> {
        alloc::vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        alloc::vec![&mut self.weight]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
}

impl BatchNorm2d {
    pub fn new(init: &mut Initializer, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(init.normal([1, channels, 1, 1], 1.0, 0.02)),
            beta: Param::new(Tensor::zeros([1, channels, 1, 1])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let gamma = g.param(&self.gamma, track);
        let beta = g.param(&self.beta, track);
        g.batch_norm(x, gamma, beta)
    }
}

impl Module for BatchNorm2d {
    fn params(&self) -> Vec<&Param> {
        alloc::vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        alloc::vec![&mut self.gamma, &mut self.beta]
    }
}

/// Convolution (no bias) followed by batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub norm: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(init: &mut Initializer, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(init, WeightInit::Gan, in_ch, out_ch, kernel, stride, kernel / 2, false),
            norm: BatchNorm2d::new(init, out_ch),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let y = self.conv.forward(g, x, track)?;
        let y = self.norm.forward(g, y, track)?;
        Ok(g.relu(y))
    }
}

impl Module for ConvBnRelu {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv.params();
        v.extend(self.norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        v.extend(self.norm.params_mut());
        v
    }
}

/// Transposed convolution doubling the resolution, then batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct DeconvBnRelu {
    pub up: Upsample2,
    pub norm: BatchNorm2d,
}

impl DeconvBnRelu {
    pub fn new(init: &mut Initializer, in_ch: usize, out_ch: usize) -> Self {
        DeconvBnRelu {
            up: Upsample2::new(init, in_ch, out_ch),
            norm: BatchNorm2d::new(init, out_ch),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let y = self.up.forward(g, x, track)?;
        let y = self.norm.forward(g, y, track)?;
        Ok(g.relu(y))
    }
}

impl Module for DeconvBnRelu {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.up.params();
        v.extend(self.norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.up.params_mut();
        v.extend(self.norm.params_mut());
        v
    }
}

/// Channel-preserving bottleneck residual block: 1x1 squeeze to a quarter of
/// the width, 3x3, 1x1 expand, identity shortcut, ReLU after the sum.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub squeeze: ConvBnRelu,
    pub spatial: ConvBnRelu,
    pub expand: Conv2d,
    pub expand_norm: BatchNorm2d,
}

impl Bottleneck {
    pub fn new(init: &mut Initializer, channels: usize) -> Self {
        let inner = (channels / 4).max(1);
        Bottleneck {
            squeeze: ConvBnRelu::new(init, channels, inner, 1, 1),
            spatial: ConvBnRelu::new(init, inner, inner, 3, 1),
            expand: Conv2d::new(init, WeightInit::Gan, inner, channels, 1, 1, 0, false),
            expand_norm: BatchNorm2d::new(init, channels),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let y = self.squeeze.forward(g, x, track)?;
        let y = self.spatial.forward(g, y, track)?;
        let y = self.expand.forward(g, y, track)?;
        let y = self.expand_norm.forward(g, y, track)?;
        let s = g.add(x, y)?;
        Ok(g.relu(s))
    }
}

impl Module for Bottleneck {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.squeeze.params();
        v.extend(self.spatial.params());
        v.extend(self.expand.params());
        v.extend(self.expand_norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.squeeze.params_mut();
        v.extend(self.spatial.params_mut());
        v.extend(self.expand.params_mut());
        v.extend(self.expand_norm.params_mut());
        v
    }
}

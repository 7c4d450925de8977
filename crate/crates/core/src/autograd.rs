//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! node is pushed and [`Graph::backward`] walks the tape in reverse. Parameters
//! enter the tape through [`Graph::param`]; when tracked, the binding is
//! remembered so gradients can be routed back to the owning [`Param`] by id.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{Param, ParamId};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const BN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Concat(Vec<Var>),
    RepeatChannels(Var, usize),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Softmax(Var),
    Pick {
        x: Var,
        channels: Vec<usize>,
    },
    Mean(Var),
    Sum(Var),
    AbsDiffMean(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, Var)>,
}

/// Gradients of one scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter, summed over every place it was bound.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (pid, var) in &self.bindings {
            if *pid != id {
                continue;
            }
            if let Some(g) = self.get(*var) {
                match acc.as_mut() {
                    Some(a) => a.add_assign(g),
                    None => acc = Some(g.clone()),
                }
            }
        }
        acc
    }
}

/// Index ranges `l` on the low-resolution side whose high-resolution partner
/// `l * stride + k - pad` is in bounds.
#[derive(Clone, Copy)]
struct Geometry {
    low: (usize, usize),
    high: (usize, usize),
    stride: usize,
    pad: usize,
}

impl Geometry {
    #[inline]
    fn range(low_len: usize, high_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let top = high_len + pad;
        if top <= k {
            return (0, 0);
        }
        let hi = ((top - k - 1) / stride + 1).min(low_len);
        (lo, hi.max(lo))
    }

    #[inline]
    fn ranges(&self, kh: usize, kw: usize) -> ((usize, usize), (usize, usize)) {
        (
            Self::range(self.low.0, self.high.0, self.stride, kh, self.pad),
            Self::range(self.low.1, self.high.1, self.stride, kw, self.pad),
        )
    }

    /// `low[l] += wv * high[h(l)]`
    #[inline]
    fn gather(&self, low: &mut [f64], high: &[f64], kh: usize, kw: usize, wv: f64) {
        let ((r0, r1), (c0, c1)) = self.ranges(kh, kw);
        let s = self.stride;
        for lr in r0..r1 {
            let hr = lr * s + kh - self.pad;
            let lrow = &mut low[lr * self.low.1..(lr + 1) * self.low.1];
            let hrow = &high[hr * self.high.1..(hr + 1) * self.high.1];
            if s == 1 {
                let off = kw as isize - self.pad as isize;
                for lc in c0..c1 {
                    lrow[lc] += wv * hrow[(lc as isize + off) as usize];
                }
            } else {
                for lc in c0..c1 {
                    lrow[lc] += wv * hrow[lc * s + kw - self.pad];
                }
            }
        }
    }

    /// `high[h(l)] += wv * low[l]`
    #[inline]
    fn scatter(&self, high: &mut [f64], low: &[f64], kh: usize, kw: usize, wv: f64) {
        let ((r0, r1), (c0, c1)) = self.ranges(kh, kw);
        let s = self.stride;
        for lr in r0..r1 {
            let hr = lr * s + kh - self.pad;
            let lrow = &low[lr * self.low.1..(lr + 1) * self.low.1];
            let hrow = &mut high[hr * self.high.1..(hr + 1) * self.high.1];
            for lc in c0..c1 {
                hrow[lc * s + kw - self.pad] += wv * lrow[lc];
            }
        }
    }

    /// `sum_l low[l] * high[h(l)]`
    #[inline]
    fn dot(&self, low: &[f64], high: &[f64], kh: usize, kw: usize) -> f64 {
        let ((r0, r1), (c0, c1)) = self.ranges(kh, kw);
        let s = self.stride;
        let mut acc = 0.0;
        for lr in r0..r1 {
            let hr = lr * s + kh - self.pad;
            let lrow = &low[lr * self.low.1..(lr + 1) * self.low.1];
            let hrow = &high[hr * self.high.1..(hr + 1) * self.high.1];
            for lc in c0..c1 {
                acc += lrow[lc] * hrow[lc * s + kw - self.pad];
            }
        }
        acc
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient (inputs under test, probes).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Bind a parameter. Untracked parameters behave as constants.
    pub fn param(&mut self, p: &Param, track: bool) -> Var {
        let v = self.push(p.value.clone(), Op::Leaf, track);
        if track {
            self.bindings.push((p.id(), v));
        }
        v
    }

    /// Cut the tape: the returned node carries the same value but no history.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let [n, ci, h, wd] = xs;
        let [co, wci, k, k2] = ws;
        if wci != ci || k != k2 {
            return Err(Error::shape("conv2d", format!("input {xs:?} vs weight {ws:?}")));
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::Dimension(format!(
                "conv2d: input {h}x{wd} too small for kernel {k} with padding {pad}"
            )));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geo = Geometry {
            low: (ho, wo),
            high: (h, wd),
            stride,
            pad,
        };
        let mut out = Tensor::zeros([n, co, ho, wo]);
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            let bias = b.map(|b| &self.nodes[b.0].value);
            for bn in 0..n {
                for o in 0..co {
                    let mut plane = vec![bias.map_or(0.0, |t| t.data()[o]); ho * wo];
                    for i in 0..ci {
                        let xp = xv.plane(bn, i);
                        for kh in 0..k {
                            for kw in 0..k {
                                let weight = wv.at([o, i, kh, kw]);
                                if weight != 0.0 {
                                    geo.gather(&mut plane, xp, kh, kw, weight);
                                }
                            }
                        }
                    }
                    out.plane_mut(bn, o).copy_from_slice(&plane);
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let needs = self.any_grad(&inputs);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, needs))
    }

    /// Transposed convolution; weight layout `[in, out, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let [n, ci, h, wd] = xs;
        let [wci, co, k, k2] = ws;
        if wci != ci || k != k2 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input {xs:?} vs weight {ws:?}"),
            ));
        }
        if output_pad >= stride.max(1) && output_pad > 0 {
            return Err(Error::Config(format!(
                "output padding {output_pad} must be smaller than stride {stride}"
            )));
        }
        let full = (h - 1) * stride + k + output_pad;
        if full < 2 * pad + 1 {
            return Err(Error::Dimension("conv_transpose2d: empty output".into()));
        }
        let ho = (h - 1) * stride + k + output_pad - 2 * pad;
        let wo = (wd - 1) * stride + k + output_pad - 2 * pad;
        let geo = Geometry {
            low: (h, wd),
            high: (ho, wo),
            stride,
            pad,
        };
        let mut out = Tensor::zeros([n, co, ho, wo]);
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            let bias = b.map(|b| &self.nodes[b.0].value);
            for bn in 0..n {
                for o in 0..co {
                    let mut plane = vec![bias.map_or(0.0, |t| t.data()[o]); ho * wo];
                    for i in 0..ci {
                        let xp = xv.plane(bn, i);
                        for kh in 0..k {
                            for kw in 0..k {
                                let weight = wv.at([i, o, kh, kw]);
                                if weight != 0.0 {
                                    geo.scatter(&mut plane, xp, kh, kw, weight);
                                }
                            }
                        }
                    }
                    out.plane_mut(bn, o).copy_from_slice(&plane);
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let needs = self.any_grad(&inputs);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, stride, pad }, needs))
    }

    /// Batch normalization with batch statistics over `(N, H, W)` per channel.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{c} channels vs affine {:?}", self.value(gamma).shape()),
            ));
        }
        let m = (n * h * w) as f64;
        let mut xhat = Tensor::zeros(xv.shape());
        let mut out = Tensor::zeros(xv.shape());
        let mut inv_std = Vec::with_capacity(c);
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let xv = self.value(x);
        for ch in 0..c {
            let mut mean = 0.0;
            for bn in 0..n {
                mean += xv.plane(bn, ch).iter().sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for bn in 0..n {
                var += xv.plane(bn, ch).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= m;
            let is = 1.0 / libm::sqrt(var + BN_EPS);
            inv_std.push(is);
            for bn in 0..n {
                let src = xv.plane(bn, ch);
                let xh = xhat.plane_mut(bn, ch);
                for (d, s) in xh.iter_mut().zip(src) {
                    *d = (s - mean) * is;
                }
                let o = out.plane_mut(bn, ch);
                for (d, s) in o.iter_mut().zip(xhat.plane(bn, ch)) {
                    *d = g[ch] * s + bt[ch];
                }
            }
        }
        let needs = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let needs = self.nodes[x.0].needs_grad;
        self.push(out, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, libm::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, libm::log, Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), needs))
    }

    /// Sum of several same-shaped nodes.
    pub fn add_all(&mut self, items: &[Var]) -> Result<Var> {
        let (&first, rest) = items
            .split_first()
            .ok_or_else(|| Error::Invalid("add_all of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of an empty list".into()))?;
        let [n, _, h, w] = self.value(*first).shape();
        let mut c_total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", self.value(*first).shape(), s),
                ));
            }
            c_total += s[1];
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for bn in 0..n {
            let mut co = 0;
            for p in parts {
                let t = self.value(*p);
                for c in 0..t.channels() {
                    out.plane_mut(bn, co).copy_from_slice(t.plane(bn, c));
                    co += 1;
                }
            }
        }
        let needs = self.any_grad(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), needs))
    }

    /// Tile the channel axis `times` times (grayscale to RGB with `times = 3`).
    pub fn repeat_channels(&mut self, x: Var, times: usize) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let mut out = Tensor::zeros([n, c * times, h, w]);
        for bn in 0..n {
            for r in 0..times {
                for ch in 0..c {
                    out.plane_mut(bn, r * c + ch).copy_from_slice(t.plane(bn, ch));
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        self.push(out, Op::RepeatChannels(x, times), needs)
    }

    /// 2x2 average pooling, output `(floor(H/2), floor(W/2))`.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = avg_pool2(self.value(x))?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(out, Op::AvgPool2(x), needs))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, _, _] = t.shape();
        let out = Tensor::from_fn([n, c, 1, 1], |[bn, ch, _, _]| {
            let p = t.plane(bn, ch);
            p.iter().sum::<f64>() / p.len() as f64
        });
        let needs = self.nodes[x.0].needs_grad;
        self.push(out, Op::GlobalAvgPool(x), needs)
    }

    /// Softmax over the channel axis at each spatial site.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_channels(self.value(x));
        let needs = self.nodes[x.0].needs_grad;
        self.push(out, Op::Softmax(x), needs)
    }

    /// Select one channel per sample from an `[N, C, 1, 1]` node.
    pub fn pick(&mut self, x: Var, channels: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        if h != 1 || w != 1 || channels.len() != n || channels.iter().any(|&k| k >= c) {
            return Err(Error::shape(
                "pick",
                format!("{:?} with {} labels", t.shape(), channels.len()),
            ));
        }
        let out = Tensor::from_fn([n, 1, 1, 1], |[bn, _, _, _]| t.at([bn, channels[bn], 0, 0]));
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(
            out,
            Op::Pick {
                x,
                channels: channels.to_vec(),
            },
            needs,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let needs = self.nodes[x.0].needs_grad;
        self.push(out, Op::Mean(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let needs = self.nodes[x.0].needs_grad;
        self.push(out, Op::Sum(x), needs)
    }

    /// `mean(|a - b|)` as a scalar.
    pub fn abs_diff_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.expect_same_shape(tb, "abs_diff_mean")?;
        let total: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| libm::fabs(x - y)).sum();
        let out = Tensor::scalar(total / ta.len() as f64);
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::AbsDiffMean(a, b), needs))
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            // Intermediate gradients are kept for inspection in tests.
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [n, ci, h, wd] = xv.shape();
                let [co, _, k, _] = wv.shape();
                let (ho, wo) = g.dims();
                let geo = Geometry {
                    low: (ho, wo),
                    high: (h, wd),
                    stride: *stride,
                    pad: *pad,
                };
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    for bn in 0..n {
                        for i in 0..ci {
                            let mut plane = vec![0.0; h * wd];
                            for o in 0..co {
                                let gp = g.plane(bn, o);
                                for kh in 0..k {
                                    for kw in 0..k {
                                        let weight = wv.at([o, i, kh, kw]);
                                        if weight != 0.0 {
                                            geo.scatter(&mut plane, gp, kh, kw, weight);
                                        }
                                    }
                                }
                            }
                            dx.plane_mut(bn, i).copy_from_slice(&plane);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    for o in 0..co {
                        for i in 0..ci {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let mut acc = 0.0;
                                    for bn in 0..n {
                                        acc += geo.dot(g.plane(bn, o), xv.plane(bn, i), kh, kw);
                                    }
                                    dw.set([o, i, kh, kw], acc);
                                }
                            }
                        }
                    }
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        accumulate(grads, *b, channel_sums(g, self.value(*b).shape()));
                    }
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [n, ci, h, wd] = xv.shape();
                let [_, co, k, _] = wv.shape();
                let (ho, wo) = g.dims();
                let geo = Geometry {
                    low: (h, wd),
                    high: (ho, wo),
                    stride: *stride,
                    pad: *pad,
                };
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    for bn in 0..n {
                        for i in 0..ci {
                            let mut plane = vec![0.0; h * wd];
                            for o in 0..co {
                                let gp = g.plane(bn, o);
                                for kh in 0..k {
                                    for kw in 0..k {
                                        let weight = wv.at([i, o, kh, kw]);
                                        if weight != 0.0 {
                                            geo.gather(&mut plane, gp, kh, kw, weight);
                                        }
                                    }
                                }
                            }
                            dx.plane_mut(bn, i).copy_from_slice(&plane);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    for i in 0..ci {
                        for o in 0..co {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let mut acc = 0.0;
                                    for bn in 0..n {
                                        acc += geo.dot(xv.plane(bn, i), g.plane(bn, o), kh, kw);
                                    }
                                    dw.set([i, o, kh, kw], acc);
                                }
                            }
                        }
                    }
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        accumulate(grads, *b, channel_sums(g, self.value(*b).shape()));
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [n, c, h, w] = xhat.shape();
                let m = (n * h * w) as f64;
                let gam = self.value(*gamma);
                let mut dgamma = Tensor::zeros(gam.shape());
                let mut dbeta = Tensor::zeros(gam.shape());
                let mut dx = Tensor::zeros(xhat.shape());
                for (ch, &istd) in inv_std.iter().enumerate().take(c) {
                    let gc = gam.data()[ch];
                    let (mut s_dy, mut s_dy_xh) = (0.0, 0.0);
                    for bn in 0..n {
                        for (dy, xh) in g.plane(bn, ch).iter().zip(xhat.plane(bn, ch)) {
                            s_dy += dy;
                            s_dy_xh += dy * xh;
                        }
                    }
                    dgamma.data_mut()[ch] = s_dy_xh;
                    dbeta.data_mut()[ch] = s_dy;
                    let k = gc * istd / m;
                    for bn in 0..n {
                        let gp = g.plane(bn, ch);
                        let xp = xhat.plane(bn, ch);
                        let out = dx.plane_mut(bn, ch);
                        for ((d, dy), xh) in out.iter_mut().zip(gp).zip(xp) {
                            *d = k * (m * dy - s_dy - xh * s_dy_xh);
                        }
                    }
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::Relu(x) => {
                let d = zip3(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                accumulate(grads, *x, d);
            }
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                let d = zip3(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { s * gv });
                accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = zip3(g, y, |gv, yv| gv * (1.0 - yv * yv));
                accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = zip3(g, y, |gv, yv| gv * yv * (1.0 - yv));
                accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = zip3(g, self.value(*x), |gv, xv| gv / xv);
                accumulate(grads, *x, d);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let d = zip3(
                    g,
                    self.value(*x),
                    |gv, xv| {
                        if (lo..=hi).contains(&xv) {
                            gv
                        } else {
                            0.0
                        }
                    },
                );
                accumulate(grads, *x, d);
            }
            Op::Affine { x, scale } => {
                let k = *scale;
                accumulate(grads, *x, g.map(|v| v * k));
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Concat(parts) => {
                let n = g.batch();
                let mut offset = 0;
                for p in parts {
                    let s = self.value(*p).shape();
                    if self.wants(*p) {
                        let mut d = Tensor::zeros(s);
                        for bn in 0..n {
                            for c in 0..s[1] {
                                d.plane_mut(bn, c).copy_from_slice(g.plane(bn, offset + c));
                            }
                        }
                        accumulate(grads, *p, d);
                    }
                    offset += s[1];
                }
            }
            Op::RepeatChannels(x, times) => {
                let s = self.value(*x).shape();
                let mut d = Tensor::zeros(s);
                for bn in 0..s[0] {
                    for r in 0..*times {
                        for c in 0..s[1] {
                            let src = g.plane(bn, r * s[1] + c);
                            for (a, b) in d.plane_mut(bn, c).iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::AvgPool2(x) => {
                let s = self.value(*x).shape();
                let mut d = Tensor::zeros(s);
                let (ho, wo) = g.dims();
                for bn in 0..s[0] {
                    for c in 0..s[1] {
                        let gp = g.plane(bn, c);
                        let dp = d.plane_mut(bn, c);
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let v = 0.25 * gp[oh * wo + ow];
                                for dh in 0..2 {
                                    for dw in 0..2 {
                                        dp[(2 * oh + dh) * s[3] + 2 * ow + dw] += v;
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::GlobalAvgPool(x) => {
                let s = self.value(*x).shape();
                let hw = (s[2] * s[3]) as f64;
                let d = Tensor::from_fn(s, |[bn, c, _, _]| g.at([bn, c, 0, 0]) / hw);
                accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let [n, c, h, w] = y.shape();
                let mut d = Tensor::zeros(y.shape());
                for bn in 0..n {
                    for hh in 0..h {
                        for ww in 0..w {
                            let dot: f64 = (0..c).map(|ch| g.at([bn, ch, hh, ww]) * y.at([bn, ch, hh, ww])).sum();
                            for ch in 0..c {
                                let yv = y.at([bn, ch, hh, ww]);
                                d.set([bn, ch, hh, ww], yv * (g.at([bn, ch, hh, ww]) - dot));
                            }
                        }
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::Pick { x, channels } => {
                let s = self.value(*x).shape();
                let mut d = Tensor::zeros(s);
                for (bn, &c) in channels.iter().enumerate() {
                    d.set([bn, c, 0, 0], g.data()[bn]);
                }
                accumulate(grads, *x, d);
            }
            Op::Mean(x) => {
                let s = self.value(*x).shape();
                let n = self.value(*x).len() as f64;
                accumulate(grads, *x, Tensor::full(s, g.data()[0] / n));
            }
            Op::Sum(x) => {
                let s = self.value(*x).shape();
                accumulate(grads, *x, Tensor::full(s, g.data()[0]));
            }
            Op::AbsDiffMean(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = g.data()[0] / ta.len() as f64;
                let da = zip3(ta, tb, |x, y| {
                    if x > y {
                        k
                    } else if x < y {
                        -k
                    } else {
                        0.0
                    }
                });
                if self.wants(*b) {
                    accumulate(grads, *b, da.map(|v| -v));
                }
                if self.wants(*a) {
                    accumulate(grads, *a, da);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match grads[v.0].as_mut() {
        Some(acc) => acc.add_assign(&d),
        None => grads[v.0] = Some(d),
    }
}

fn zip3(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn channel_sums(g: &Tensor, shape: [usize; 4]) -> Tensor {
    let mut d = Tensor::zeros(shape);
    for bn in 0..g.batch() {
        for c in 0..g.channels() {
            d.data_mut()[c] += g.plane(bn, c).iter().sum::<f64>();
        }
    }
    d
}

/// 2x2 mean pooling on a plain tensor, flooring odd dimensions.
pub fn avg_pool2(t: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = t.shape();
    if h < 2 || w < 2 {
        return Err(Error::Dimension(format!(
            "cannot halve a {h}x{w} image (need at least 2x2)"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for bn in 0..n {
        for ch in 0..c {
            let src = t.plane(bn, ch);
            let dst = out.plane_mut(bn, ch);
            for oh in 0..ho {
                for ow in 0..wo {
                    let i = 2 * oh * w + 2 * ow;
                    dst[oh * wo + ow] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
    }
    Ok(out)
}

/// Channel-wise softmax on a plain tensor.
pub fn softmax_channels(t: &Tensor) -> Tensor {
    let [n, c, h, w] = t.shape();
    let mut out = Tensor::zeros(t.shape());
    for bn in 0..n {
        for hh in 0..h {
            for ww in 0..w {
                let max = (0..c)
                    .map(|ch| t.at([bn, ch, hh, ww]))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for ch in 0..c {
                    let e = libm::exp(t.at([bn, ch, hh, ww]) - max);
                    out.set([bn, ch, hh, ww], e);
                    total += e;
                }
                for ch in 0..c {
                    let v = out.at([bn, ch, hh, ww]) / total;
                    out.set([bn, ch, hh, ww], v);
                }
            }
        }
    }
    out
}

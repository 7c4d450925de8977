//! Windowed structural similarity.
//!
//! Gaussian-weighted local statistics over every fully-contained 11x11
//! window (σ = 1.5), constants `K1 = 0.01`, `K2 = 0.03`, dynamic range 255,
//! averaged over all window positions. Multi-channel images score the mean of
//! the per-channel values.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        let v = self.k1 * self.dynamic_range;
        v * v
    }

    pub fn c2(&self) -> f64 {
        let v = self.k2 * self.dynamic_range;
        v * v
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - centre;
            libm::exp(-(d * d) / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering: output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of two single-channel planes of `h x w` samples.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, params: &SsimParams) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::Dimension(format!(
            "ssim: planes of {} and {} samples for a {h}x{w} image",
            a.len(),
            b.len()
        )));
    }
    if h < params.window || w < params.window {
        return Err(Error::Dimension(format!(
            "ssim: {h}x{w} image is smaller than the {0}x{0} window",
            params.window
        )));
    }
    let taps = gaussian_taps(params.window, params.sigma);
    let product = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&product(a, a), h, w, &taps);
    let bb = filter_valid(&product(b, b), h, w, &taps);
    let ab = filter_valid(&product(a, b), h, w, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let (mab, maa, mbb) = (ma * mb, ma * ma, mb * mb);
        let var_a = aa[i] - maa;
        let var_b = bb[i] - mbb;
        let cov = ab[i] - mab;
        total += ((2.0 * mab + c1) * (2.0 * cov + c2)) / ((maa + mbb + c1) * (var_a + var_b + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM between two 8-bit images of identical shape.
pub fn ssim(a: &Image<u8>, b: &Image<u8>) -> Result<f64> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::Dimension(format!(
            "ssim: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    let params = SsimParams::default();
    let (h, w) = a.dims();
    let plane = h * w;
    let to_f64 = |img: &Image<u8>, c: usize| -> Vec<f64> {
        img.data()[c * plane..(c + 1) * plane]
            .iter()
            .map(|&v| v as f64)
            .collect()
    };
    let mut total = 0.0;
    for c in 0..a.channels() {
        total += ssim_plane(&to_f64(a, c), &to_f64(b, c), h, w, &params)?;
    }
    Ok(total / a.channels() as f64)
}

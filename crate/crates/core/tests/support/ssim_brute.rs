//! Direct per-window SSIM, independent of the separable implementation.

#![allow(dead_code)]

use facesketch_core::image::Image;
use rand::rngs::StdRng;
use rand::Rng;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// 2-D Gaussian weights built directly, not as an outer product of taps.
pub fn window() -> Vec<f64> {
    let c = (WINDOW - 1) as f64 / 2.0;
    let mut w = Vec::with_capacity(WINDOW * WINDOW);
    for i in 0..WINDOW {
        for j in 0..WINDOW {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            w.push((-(di * di + dj * dj) / (2.0 * SIGMA * SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

pub fn brute_plane(a: &[u8], b: &[u8], h: usize, width: usize) -> f64 {
    let w = window();
    let mut sum = 0.0;
    let mut n = 0;
    for y in 0..=h - WINDOW {
        for x in 0..=width - WINDOW {
            let at = |img: &[u8], i: usize, j: usize| img[(y + i) * width + x + j] as f64;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..WINDOW {
                for j in 0..WINDOW {
                    let k = w[i * WINDOW + j];
                    ma += k * at(a, i, j);
                    mb += k * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..WINDOW {
                for j in 0..WINDOW {
                    let k = w[i * WINDOW + j];
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            sum += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            n += 1;
        }
    }
    sum / n as f64
}

pub fn random_image(rng: &mut StdRng, channels: usize, h: usize, w: usize) -> Image<u8> {
    // Mix smooth structure with noise so windows span a range of variances.
    let phase: f64 = rng.random_range(0.0..6.0);
    let data = (0..channels * h * w)
        .map(|i| {
            let (y, x) = ((i / w) % h, i % w);
            let base = 128.0 + 90.0 * ((x as f64 * 0.2 + phase).sin() * (y as f64 * 0.15).cos());
            (base + rng.random_range(-40.0..40.0)).clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::from_planar(channels, h, w, data).unwrap()
}

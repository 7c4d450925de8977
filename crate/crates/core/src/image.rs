//! Planar (channel-major) images and their conversion to network tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sample types that images can hold.
pub trait Pixel: Copy + PartialEq + core::fmt::Debug {
    /// Value used to blank out the facial windows in the rest image.
    fn mid_gray() -> Self;
}

impl Pixel for u8 {
    fn mid_gray() -> Self {
        128
    }
}

impl Pixel for f64 {
    /// 128 on the `[-1, 1]` scale used by the networks.
    fn mid_gray() -> Self {
        normalize(128)
    }
}

#[inline]
pub fn normalize(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

#[inline]
pub fn denormalize(v: f64) -> u8 {
    libm::round((v.clamp(-1.0, 1.0) + 1.0) * 127.5) as u8
}

/// Axis-aligned rectangle, top-left corner plus size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect { x, y, width, height }
    }

    /// From corner coordinates with exclusive far edges.
    pub fn from_corners(x1: usize, y1: usize, x2: usize, y2: usize) -> Result<Self> {
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::Region(format!("degenerate rectangle ({x1},{y1})-({x2},{y2})")));
        }
        Ok(Rect::new(x1, y1, x2 - x1, y2 - y1))
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Pixel> Image<T> {
    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_planar(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{channels}x{height}x{width} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_planar(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn crop(&self, r: Rect) -> Result<Image<T>> {
        if r.area() == 0 {
            return Err(Error::Region(format!("empty crop {r:?}")));
        }
        if !r.fits_in(self.height, self.width) {
            return Err(Error::Region(format!(
                "crop {r:?} exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * r.area());
        for c in 0..self.channels {
            for y in r.y..r.bottom() {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + r.x..row + r.right()]);
            }
        }
        Image::from_planar(self.channels, r.height, r.width, data)
    }

    /// Copy `patch` with its top-left corner at `(x, y)`.
    pub fn paste(&mut self, patch: &Image<T>, x: usize, y: usize) -> Result<()> {
        let r = Rect::new(x, y, patch.width, patch.height);
        if patch.channels != self.channels || !r.fits_in(self.height, self.width) {
            return Err(Error::Dimension(format!(
                "cannot paste {}x{}x{} at ({x},{y}) into {}x{}x{}",
                patch.channels, patch.height, patch.width, self.channels, self.height, self.width
            )));
        }
        for c in 0..self.channels {
            for py in 0..patch.height {
                let dst = (c * self.height + y + py) * self.width + x;
                let src = (c * patch.height + py) * patch.width;
                self.data[dst..dst + patch.width].copy_from_slice(&patch.data[src..src + patch.width]);
            }
        }
        Ok(())
    }

    pub fn fill_rect(&mut self, r: Rect, v: T) {
        for c in 0..self.channels {
            for y in r.y..r.bottom().min(self.height) {
                for x in r.x..r.right().min(self.width) {
                    self.set(c, y, x, v);
                }
            }
        }
    }

    pub fn map<U: Pixel>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Image<f64> {
    /// Batch-of-one tensor `[1, C, H, W]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, self.channels, self.height, self.width], self.data.clone()).expect("planar layout matches")
    }

    /// Sample `n` of a tensor as an image.
    pub fn from_tensor(t: &Tensor, n: usize) -> Image<f64> {
        let s = t.sample(n);
        Image {
            channels: s.channels(),
            height: s.height(),
            width: s.width(),
            data: s.into_vec(),
        }
    }
}

impl Image<u8> {
    /// Network input on the `[-1, 1]` scale.
    pub fn normalized(&self) -> Image<f64> {
        self.map(normalize)
    }

    /// Replicate a single channel `times` times.
    pub fn repeat_channels(&self, times: usize) -> Image<u8> {
        let mut data = Vec::with_capacity(self.data.len() * times);
        for _ in 0..times {
            data.extend_from_slice(&self.data);
        }
        Image {
            channels: self.channels * times,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

impl Image<f64> {
    pub fn quantized(&self) -> Image<u8> {
        self.map(denormalize)
    }
}

//! Conversions between codec images and planar core images, and the
//! letterbox transform that brings faces to the training resolution.

use std::path::Path;

use facesketch_core::image::Image;
use facesketch_core::image::Rect;
use facesketch_core::regions::{FaceRegions, RegionBox};
use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Pixel as _, Rgb, RgbImage};

use crate::error::{Error, Result};

pub fn read_rgb(path: &Path) -> Result<Image<u8>> {
    let img = open(path)?.to_rgb8();
    Ok(from_rgb(&img))
}

pub fn read_gray(path: &Path) -> Result<Image<u8>> {
    let img = open(path)?.to_luma8();
    Ok(from_gray(&img))
}

/// Read with the channel count the caller needs (1 or 3).
pub fn read_channels(path: &Path, channels: usize) -> Result<Image<u8>> {
    match channels {
        1 => read_gray(path),
        _ => read_rgb(path),
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

/// Write a 1- or 3-channel image as PNG.
pub fn write_png(path: &Path, img: &Image<u8>) -> Result<()> {
    let res = match img.channels() {
        1 => to_gray(img).save_with_format(path, image::ImageFormat::Png),
        3 => to_rgb(img).save_with_format(path, image::ImageFormat::Png),
        c => return Err(Error::Usage(format!("cannot write a {c}-channel image"))),
    };
    res.map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

pub fn from_rgb(img: &RgbImage) -> Image<u8> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0u8; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p[c];
        }
    }
    Image::from_planar(3, h, w, data).expect("sized above")
}

pub fn from_gray(img: &GrayImage) -> Image<u8> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Image::from_planar(1, h, w, img.as_raw().clone()).expect("sized above")
}

pub fn to_rgb(img: &Image<u8>) -> RgbImage {
    let src = if img.channels() == 1 {
        img.repeat_channels(3)
    } else {
        img.clone()
    };
    ImageBuffer::from_fn(src.width() as u32, src.height() as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| src.get(c, y as usize, x as usize)))
    })
}

pub fn to_gray(img: &Image<u8>) -> GrayImage {
    if img.channels() == 1 {
        return GrayImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec()).expect("sized");
    }
    ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = Rgb([0, 1, 2].map(|c| img.get(c, y as usize, x as usize)));
        p.to_luma()
    })
}

/// Resize with a triangle filter; a no-op when the size already matches.
pub fn resize(img: &Image<u8>, height: usize, width: usize) -> Image<u8> {
    if img.dims() == (height, width) {
        return img.clone();
    }
    let (w, h) = (width as u32, height as u32);
    match img.channels() {
        1 => from_gray(&imageops::resize(&to_gray(img), w, h, FilterType::Triangle)),
        _ => from_rgb(&imageops::resize(&to_rgb(img), w, h, FilterType::Triangle)),
    }
}

/// Aspect-preserving fit into a `size x size` canvas, centred.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Letterbox {
    pub source: (usize, usize),
    pub size: usize,
    /// `(height, width)` of the resized content.
    pub content: (usize, usize),
    /// `(x, y)` of the content's top-left corner.
    pub offset: (usize, usize),
}

impl Letterbox {
    pub fn fit(source: (usize, usize), size: usize) -> Letterbox {
        let (h, w) = source;
        let scale = size as f64 / h.max(w) as f64;
        let ch = ((h as f64 * scale).round() as usize).clamp(1, size);
        let cw = ((w as f64 * scale).round() as usize).clamp(1, size);
        Letterbox {
            source,
            size,
            content: (ch, cw),
            offset: ((size - cw) / 2, (size - ch) / 2),
        }
    }

    pub fn scale(&self) -> f64 {
        self.content.1 as f64 / self.source.1 as f64
    }

    pub fn is_identity(&self) -> bool {
        self.source == (self.size, self.size)
    }

    /// Resize and pad with `fill` (per channel).
    pub fn apply(&self, img: &Image<u8>, fill: u8) -> Image<u8> {
        if self.is_identity() {
            return img.clone();
        }
        let content = resize(img, self.content.0, self.content.1);
        let mut out = Image::filled(img.channels(), self.size, self.size, fill);
        out.paste(&content, self.offset.0, self.offset.1)
            .expect("content fits the canvas");
        out
    }

    /// Undo [`Letterbox::apply`]: crop the content and resize to the source.
    pub fn invert(&self, img: &Image<u8>) -> Result<Image<u8>> {
        if self.is_identity() {
            return Ok(img.clone());
        }
        let rect = Rect::new(self.offset.0, self.offset.1, self.content.1, self.content.0);
        let content = img.crop(rect)?;
        Ok(resize(&content, self.source.0, self.source.1))
    }

    pub fn regions(&self, r: &FaceRegions) -> FaceRegions {
        let sx = self.content.1 as f64 / self.source.1 as f64;
        let sy = self.content.0 as f64 / self.source.0 as f64;
        let (ox, oy) = (self.offset.0 as f64, self.offset.1 as f64);
        let map = |b: &RegionBox| RegionBox::new(b.cx * sx + ox, b.cy * sy + oy, b.width * sx, b.height * sy);
        FaceRegions::new(
            [map(&r.left_eye), map(&r.right_eye), map(&r.nose), map(&r.mouth)],
            (self.size, self.size),
        )
    }

    /// Map a pixel rectangle of the source into the canvas.
    pub fn rect(&self, r: Rect) -> Rect {
        let sx = self.content.1 as f64 / self.source.1 as f64;
        let sy = self.content.0 as f64 / self.source.0 as f64;
        let x1 = (r.x as f64 * sx).round() as usize + self.offset.0;
        let y1 = (r.y as f64 * sy).round() as usize + self.offset.1;
        let x2 = (r.right() as f64 * sx).round() as usize + self.offset.0;
        let y2 = (r.bottom() as f64 * sy).round() as usize + self.offset.1;
        Rect::new(x1, y1, (x2 - x1).max(1), (y2 - y1).max(1))
    }
}

//! Facial region geometry: five-way split of a face and the inverse stitch.
//!
//! The four key regions are fixed-size windows centred on detected
//! landmarks. The fifth part, the rest, is the whole image with those windows
//! blanked to mid-gray. Stitching pastes the rest first and then each window
//! in [`RegionConfig::paste_order`], so later windows win on overlap.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Pixel, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    LeftEye,
    RightEye,
    Nose,
    Mouth,
    Rest,
}

impl Part {
    pub const ALL: [Part; 5] = [Part::LeftEye, Part::RightEye, Part::Nose, Part::Mouth, Part::Rest];
    pub const KEY: [Part; 4] = [Part::LeftEye, Part::RightEye, Part::Nose, Part::Mouth];

    pub fn name(self) -> &'static str {
        match self {
            Part::LeftEye => "left_eye",
            Part::RightEye => "right_eye",
            Part::Nose => "nose",
            Part::Mouth => "mouth",
            Part::Rest => "rest",
        }
    }
}

/// A detected region: centre and extent in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "h")]
    pub height: f64,
}

impl RegionBox {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        RegionBox { cx, cy, width, height }
    }

    fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.width.is_finite() && self.height.is_finite()
    }

    pub fn inside(&self, dims: (usize, usize)) -> bool {
        let (h, w) = (dims.0 as f64, dims.1 as f64);
        self.is_finite()
            && self.width > 0.0
            && self.height > 0.0
            && self.cx - self.width / 2.0 >= 0.0
            && self.cy - self.height / 2.0 >= 0.0
            && self.cx + self.width / 2.0 <= w
            && self.cy + self.height / 2.0 <= h
    }

    /// Shift (and if necessary shrink) the box so it lies inside the image.
    pub fn clamped(&self, dims: (usize, usize)) -> Result<RegionBox> {
        if !self.is_finite() || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Region(format!("degenerate box {self:?}")));
        }
        let (h, w) = (dims.0 as f64, dims.1 as f64);
        let bw = self.width.min(w);
        let bh = self.height.min(h);
        Ok(RegionBox {
            cx: self.cx.clamp(bw / 2.0, w - bw / 2.0),
            cy: self.cy.clamp(bh / 2.0, h - bh / 2.0),
            width: bw,
            height: bh,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceRegions {
    pub left_eye: RegionBox,
    pub right_eye: RegionBox,
    pub nose: RegionBox,
    pub mouth: RegionBox,
    /// `(height, width)` of the image the boxes refer to.
    pub image_dims: (usize, usize),
}

impl FaceRegions {
    pub fn new(boxes: [RegionBox; 4], image_dims: (usize, usize)) -> Self {
        let [left_eye, right_eye, nose, mouth] = boxes;
        FaceRegions {
            left_eye,
            right_eye,
            nose,
            mouth,
            image_dims,
        }
    }

    /// Raw detections clamped into the image.
    pub fn clamped(boxes: [RegionBox; 4], image_dims: (usize, usize)) -> Result<Self> {
        let mut out = [boxes[0]; 4];
        for (o, b) in out.iter_mut().zip(boxes) {
            *o = b.clamped(image_dims)?;
        }
        Ok(Self::new(out, image_dims))
    }

    pub fn region(&self, part: Part) -> Option<&RegionBox> {
        match part {
            Part::LeftEye => Some(&self.left_eye),
            Part::RightEye => Some(&self.right_eye),
            Part::Nose => Some(&self.nose),
            Part::Mouth => Some(&self.mouth),
            Part::Rest => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for part in Part::KEY {
            let b = self.region(part).expect("key part");
            if !b.inside(self.image_dims) {
                return Err(Error::Region(format!(
                    "{} box {b:?} is empty or outside the {}x{} image",
                    part.name(),
                    self.image_dims.0,
                    self.image_dims.1
                )));
            }
        }
        Ok(())
    }

    /// Map every box through `scale` then `offset` (resize + pad).
    pub fn transformed(&self, scale: f64, offset: (f64, f64), image_dims: (usize, usize)) -> Self {
        let map = |b: &RegionBox| RegionBox {
            cx: b.cx * scale + offset.0,
            cy: b.cy * scale + offset.1,
            width: b.width * scale,
            height: b.height * scale,
        };
        FaceRegions {
            left_eye: map(&self.left_eye),
            right_eye: map(&self.right_eye),
            nose: map(&self.nose),
            mouth: map(&self.mouth),
            image_dims,
        }
    }

    /// The fixed-size crop window of `part`, centred on its box and shifted
    /// to stay inside the image. The size never changes.
    pub fn window(&self, part: Part, config: &RegionConfig) -> Result<Rect> {
        let (h, w) = self.image_dims;
        let Some(b) = self.region(part) else {
            return Ok(Rect::new(0, 0, w, h));
        };
        let (ww, wh) = config.window_size(part);
        if ww > w || wh > h {
            return Err(Error::Region(format!(
                "{} window {ww}x{wh} larger than the {w}x{h} image",
                part.name()
            )));
        }
        let place = |centre: f64, size: usize, limit: usize| -> usize {
            let start = libm::round(centre - size as f64 / 2.0);
            start.clamp(0.0, (limit - size) as f64) as usize
        };
        Ok(Rect::new(place(b.cx, ww, w), place(b.cy, wh, h), ww, wh))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionConfig {
    /// `(width, height)` of the eye windows.
    pub eye: (usize, usize),
    pub nose: (usize, usize),
    pub mouth: (usize, usize),
    /// Rest first, then the key regions in paste order.
    pub paste_order: [Part; 5],
}

impl Default for RegionConfig {
    /// Window sizes for 512x512 faces.
    fn default() -> Self {
        RegionConfig {
            eye: (128, 128),
            nose: (160, 160),
            mouth: (192, 192),
            paste_order: [Part::Rest, Part::Nose, Part::LeftEye, Part::RightEye, Part::Mouth],
        }
    }
}

impl RegionConfig {
    pub const BASE_RESOLUTION: usize = 512;

    /// Default windows rescaled to `resolution`, rounded to the nearest
    /// positive multiple of `multiple`.
    pub fn for_resolution(resolution: usize, multiple: usize) -> Self {
        let scale = |v: usize| {
            let exact = v as f64 * resolution as f64 / Self::BASE_RESOLUTION as f64;
            let m = libm::round(exact / multiple as f64).max(1.0) as usize;
            m * multiple
        };
        let d = Self::default();
        RegionConfig {
            eye: (scale(d.eye.0), scale(d.eye.1)),
            nose: (scale(d.nose.0), scale(d.nose.1)),
            mouth: (scale(d.mouth.0), scale(d.mouth.1)),
            paste_order: d.paste_order,
        }
    }

    /// `(width, height)`; the rest has no fixed window.
    pub fn window_size(&self, part: Part) -> (usize, usize) {
        match part {
            Part::LeftEye | Part::RightEye => self.eye,
            Part::Nose => self.nose,
            Part::Mouth => self.mouth,
            Part::Rest => (0, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [self.eye, self.nose, self.mouth] {
            if s.0 == 0 || s.1 == 0 {
                return Err(Error::Config(format!("window sizes must be positive, got {s:?}")));
            }
        }
        let mut sorted = self.paste_order;
        sorted.sort();
        if sorted != Part::ALL || self.paste_order[0] != Part::Rest {
            return Err(Error::Config(format!(
                "paste order must list all five parts with rest first, got {:?}",
                self.paste_order
            )));
        }
        Ok(())
    }
}

/// The five pieces of a face.
#[derive(Clone, Debug, PartialEq)]
pub struct Parts<T> {
    pub left_eye: Image<T>,
    pub right_eye: Image<T>,
    pub nose: Image<T>,
    pub mouth: Image<T>,
    pub rest: Image<T>,
}

impl<T> Parts<T> {
    pub fn get(&self, part: Part) -> &Image<T> {
        match part {
            Part::LeftEye => &self.left_eye,
            Part::RightEye => &self.right_eye,
            Part::Nose => &self.nose,
            Part::Mouth => &self.mouth,
            Part::Rest => &self.rest,
        }
    }

    pub fn get_mut(&mut self, part: Part) -> &mut Image<T> {
        match part {
            Part::LeftEye => &mut self.left_eye,
            Part::RightEye => &mut self.right_eye,
            Part::Nose => &mut self.nose,
            Part::Mouth => &mut self.mouth,
            Part::Rest => &mut self.rest,
        }
    }

    /// Build from a per-part constructor, in [`Part::ALL`] order.
    pub fn try_from_fn<E>(
        mut f: impl FnMut(Part) -> core::result::Result<Image<T>, E>,
    ) -> core::result::Result<Self, E> {
        Ok(Parts {
            left_eye: f(Part::LeftEye)?,
            right_eye: f(Part::RightEye)?,
            nose: f(Part::Nose)?,
            mouth: f(Part::Mouth)?,
            rest: f(Part::Rest)?,
        })
    }
}

fn check_dims<T: Pixel>(image: &Image<T>, regions: &FaceRegions) -> Result<()> {
    if image.dims() != regions.image_dims {
        return Err(Error::Region(format!(
            "regions describe a {:?} image, got {:?}",
            regions.image_dims,
            image.dims()
        )));
    }
    regions.validate()
}

pub fn split_parts<T: Pixel>(image: &Image<T>, regions: &FaceRegions, config: &RegionConfig) -> Result<Parts<T>> {
    config.validate()?;
    check_dims(image, regions)?;
    let windows: Vec<Rect> = Part::KEY
        .iter()
        .map(|&p| regions.window(p, config))
        .collect::<Result<_>>()?;
    let mut rest = image.clone();
    for w in &windows {
        rest.fill_rect(*w, T::mid_gray());
    }
    Ok(Parts {
        left_eye: image.crop(windows[0])?,
        right_eye: image.crop(windows[1])?,
        nose: image.crop(windows[2])?,
        mouth: image.crop(windows[3])?,
        rest,
    })
}

pub fn stitch_parts<T: Pixel>(parts: &Parts<T>, regions: &FaceRegions, config: &RegionConfig) -> Result<Image<T>> {
    config.validate()?;
    check_dims(&parts.rest, regions)?;
    let channels = parts.rest.channels();
    let mut out = parts.rest.clone();
    for &part in &config.paste_order[1..] {
        let window = regions.window(part, config)?;
        let patch = parts.get(part);
        if patch.dims() != (window.height, window.width) || patch.channels() != channels {
            return Err(Error::Dimension(format!(
                "{} patch is {}x{}x{}, window needs {}x{}x{}",
                part.name(),
                patch.channels(),
                patch.height(),
                patch.width(),
                channels,
                window.height,
                window.width
            )));
        }
        out.paste(patch, window.x, window.y)?;
    }
    Ok(out)
}

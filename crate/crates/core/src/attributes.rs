//! Facial attribute annotations, style labels and per-split tallies.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Rect;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HairColor {
    Brown,
    Black,
    Red,
    Golden,
}

/// Artist drawing style.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Style {
    Style1,
    Style2,
    Style3,
}

impl Style {
    pub const ALL: [Style; 3] = [Style::Style1, Style::Style2, Style::Style3];

    pub fn from_label(label: u8) -> Result<Style> {
        match label {
            1 => Ok(Style::Style1),
            2 => Ok(Style::Style2),
            3 => Ok(Style::Style3),
            other => Err(Error::StyleLabel(other)),
        }
    }

    /// `1`, `2` or `3`.
    pub fn label(self) -> u8 {
        match self {
            Style::Style1 => 1,
            Style::Style2 => 2,
            Style::Style3 => 3,
        }
    }
}

impl TryFrom<u8> for Style {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Style::from_label(v)
    }
}

impl From<Style> for u8 {
    fn from(s: Style) -> u8 {
        s.label()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!(
                "unknown split {other:?} (expected train or test)"
            ))),
        }
    }
}

/// Mean RGB colour; components in `[0, 255]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRgb(pub [f64; 3]);

impl MeanRgb {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|v| (0.0..=255.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "RGB components must lie in [0, 255], got {:?}",
                self.0
            )))
        }
    }
}

/// Skin sample rectangle as `[x1, y1, x2, y2]`, far edges exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkinPatch(pub [usize; 4]);

impl SkinPatch {
    pub fn rect(&self) -> Result<Rect> {
        let [x1, y1, x2, y2] = self.0;
        Rect::from_corners(x1, y1, x2, y2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceAttributes {
    pub gender: Gender,
    pub smile: bool,
    pub frontal_face: bool,
    pub has_hair: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hair_color: Option<HairColor>,
    pub earring: bool,
    pub skin_patch: SkinPatch,
    pub lip_color: MeanRgb,
    pub eye_color: MeanRgb,
}

impl FaceAttributes {
    /// Check every invariant that does not need the photo.
    pub fn validate(&self) -> core::result::Result<(), (&'static str, Error)> {
        if self.has_hair != self.hair_color.is_some() {
            return Err((
                "hair_color",
                Error::Invalid(String::from("hair_color must be present exactly when has_hair is true")),
            ));
        }
        self.skin_patch.rect().map_err(|e| ("skin_patch", e))?;
        self.lip_color.validate().map_err(|e| ("lip_color", e))?;
        self.eye_color.validate().map_err(|e| ("eye_color", e))?;
        Ok(())
    }

    /// The skin rectangle must lie inside a `height x width` photo.
    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        let r = self.skin_patch.rect()?;
        if !r.fits_in(height, width) {
            return Err(Error::Region(format!(
                "skin patch {:?} extends past the {width}x{height} photo",
                self.skin_patch.0
            )));
        }
        Ok(())
    }
}

/// Attribute slice columns, in report order.
pub const SLICE_KEYS: [&str; 17] = [
    "w/ H", "w/o H", "H(b)", "H(bl)", "H(r)", "H(g)", "M", "F", "w/ E", "w/o E", "w/ S", "w/o S", "w/ F", "w/o F",
    "S1", "S2", "S3",
];

/// Binary partitions of the slice columns; each pair covers every sample.
pub const BINARY_PARTITIONS: [(&str, &str); 5] = [
    ("w/ H", "w/o H"),
    ("M", "F"),
    ("w/ E", "w/o E"),
    ("w/ S", "w/o S"),
    ("w/ F", "w/o F"),
];

/// Every slice a sample belongs to.
pub fn slice_keys(attrs: &FaceAttributes, style: Style) -> Vec<&'static str> {
    let mut keys = Vec::with_capacity(8);
    if attrs.has_hair {
        keys.push("w/ H");
        keys.push(match attrs.hair_color {
            Some(HairColor::Brown) => "H(b)",
            Some(HairColor::Black) => "H(bl)",
            Some(HairColor::Red) => "H(r)",
            Some(HairColor::Golden) | None => "H(g)",
        });
    } else {
        keys.push("w/o H");
    }
    keys.push(match attrs.gender {
        Gender::Male => "M",
        Gender::Female => "F",
    });
    keys.push(if attrs.earring { "w/ E" } else { "w/o E" });
    keys.push(if attrs.smile { "w/ S" } else { "w/o S" });
    keys.push(if attrs.frontal_face { "w/ F" } else { "w/o F" });
    keys.push(match style {
        Style::Style1 => "S1",
        Style::Style2 => "S2",
        Style::Style3 => "S3",
    });
    keys
}

/// Image counts per attribute value for one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
}

impl SplitStats {
    pub fn tally<'a>(split: Split, samples: impl IntoIterator<Item = (&'a FaceAttributes, Style)>) -> Self {
        let mut counts: BTreeMap<String, usize> = SLICE_KEYS.iter().map(|k| (String::from(*k), 0)).collect();
        let mut total = 0;
        for (attrs, style) in samples {
            total += 1;
            for k in slice_keys(attrs, style) {
                *counts.get_mut(k).expect("known key") += 1;
            }
        }
        SplitStats { split, total, counts }
    }

    pub fn get(&self, key: &str) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    /// Counts in [`SLICE_KEYS`] order.
    pub fn row(&self) -> [usize; 17] {
        let mut row = [0; 17];
        for (r, k) in row.iter_mut().zip(SLICE_KEYS) {
            *r = self.get(k);
        }
        row
    }

    /// Partition totals, hair-colour sum and style sum must all equal `total`.
    pub fn check_consistency(&self) -> Result<()> {
        for (a, b) in BINARY_PARTITIONS {
            if self.get(a) + self.get(b) != self.total {
                return Err(Error::Invalid(format!(
                    "{a} + {b} = {} but split has {}",
                    self.get(a) + self.get(b),
                    self.total
                )));
            }
        }
        let hair: usize = ["H(b)", "H(bl)", "H(r)", "H(g)"].iter().map(|k| self.get(k)).sum();
        let styles: usize = ["S1", "S2", "S3"].iter().map(|k| self.get(k)).sum();
        if hair != self.get("w/ H") || styles != self.total {
            return Err(Error::Invalid(format!(
                "hair colours sum to {hair} (w/ H = {}), styles sum to {styles} (total {})",
                self.get("w/ H"),
                self.total
            )));
        }
        Ok(())
    }
}

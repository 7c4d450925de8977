//! Procedural photo/sketch pairs laid out like a real dataset root.
//!
//! Used by tests, the acceptance suite and `facesketch prepare --synthetic`.
//! Attributes cycle with the pair index so every slice column is populated
//! once a split has a dozen or so pairs.

use std::path::Path;

use facesketch_core::attributes::{FaceAttributes, Gender, HairColor, MeanRgb, SkinPatch, Split, Style};
use facesketch_core::image::Image;
use facesketch_core::regions::{FaceRegions, RegionBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{self, AnnotationRecord, PHOTO_DIR, SKETCH_DIR};
use crate::detect::{FixtureRegions, RegionRecord};
use crate::error::{Error, Result};
use crate::imageio::write_png;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub train: usize,
    pub test: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train: 12,
            test: 6,
            height: 64,
            width: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticFace {
    pub photo: Image<u8>,
    pub sketch: Image<u8>,
    pub regions: FaceRegions,
    pub attributes: FaceAttributes,
    pub style: Style,
}

const HAIR: [HairColor; 4] = [HairColor::Brown, HairColor::Black, HairColor::Red, HairColor::Golden];

fn hair_rgb(c: HairColor) -> [u8; 3] {
    match c {
        HairColor::Brown => [110, 70, 40],
        HairColor::Black => [25, 20, 20],
        HairColor::Red => [170, 60, 30],
        HairColor::Golden => [220, 180, 90],
    }
}

fn paint<F: Fn(f64, f64) -> bool>(img: &mut Image<u8>, color: &[u8], inside: F) {
    let (h, w) = img.dims();
    for y in 0..h {
        for x in 0..w {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                for (c, &v) in color.iter().enumerate() {
                    img.set(c, y, x, v);
                }
            }
        }
    }
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> impl Fn(f64, f64) -> bool {
    move |x, y| {
        let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
        dx * dx + dy * dy <= 1.0
    }
}

fn ring(cx: f64, cy: f64, rx: f64, ry: f64, t: f64) -> impl Fn(f64, f64) -> bool {
    let outer = ellipse(cx, cy, rx, ry);
    let inner = ellipse(cx, cy, (rx - t).max(0.5), (ry - t).max(0.5));
    move |x, y| outer(x, y) && !inner(x, y)
}

/// Attributes and style for pair `index`.
pub fn attributes_for(index: usize, height: usize, width: usize) -> (FaceAttributes, Style) {
    let has_hair = index % 5 != 4;
    let (ph, pw) = ((height / 10).max(2), (width / 10).max(2));
    let (x1, y1) = (width * 3 / 10, height * 6 / 10);
    let attrs = FaceAttributes {
        gender: if index.is_multiple_of(2) {
            Gender::Male
        } else {
            Gender::Female
        },
        smile: (index / 3) % 2 == 1,
        frontal_face: index % 7 != 6,
        has_hair,
        hair_color: has_hair.then(|| HAIR[index % 4]),
        earring: (index / 2) % 2 == 1,
        skin_patch: SkinPatch([x1, y1, x1 + pw, y1 + ph]),
        lip_color: MeanRgb([0.0; 3]),
        eye_color: MeanRgb([0.0; 3]),
    };
    (attrs, Style::ALL[index % 3])
}

/// Draw pair `index`. Lip and eye colours are painted flat, so the stored
/// means are exact.
pub fn synth_face(index: usize, height: usize, width: usize, rng: &mut impl Rng) -> SyntheticFace {
    let (mut attributes, style) = attributes_for(index, height, width);
    let (h, w) = (height as f64, width as f64);
    let jx = rng.random_range(-0.03..0.03) * w;
    let jy = rng.random_range(-0.03..0.03) * h;
    let turn = if attributes.frontal_face { 0.0 } else { 0.06 * w };
    let (fx, fy) = (0.5 * w + jx, 0.55 * h + jy);
    let (frx, fry) = (0.32 * w, 0.38 * h);
    let eye_y = fy - 0.1 * h;
    let eyes = [fx - 0.13 * w + turn, fx + 0.13 * w + turn];
    let (erx, ery) = (0.06 * w, 0.03 * h);
    let (nx, ny) = (fx + turn, fy + 0.03 * h);
    let (mx, my) = (fx + turn, fy + 0.17 * h);
    let (mrx, mry) = (0.11 * w, if attributes.smile { 0.045 * h } else { 0.025 * h });

    let skin = [
        rng.random_range(180..235u8),
        rng.random_range(140..190u8),
        rng.random_range(110..160u8),
    ];
    let lip = [
        rng.random_range(150..210u8),
        rng.random_range(40..90u8),
        rng.random_range(50..100u8),
    ];
    let iris = [
        rng.random_range(20..90u8),
        rng.random_range(30..110u8),
        rng.random_range(30..120u8),
    ];
    attributes.lip_color = MeanRgb(lip.map(f64::from));
    attributes.eye_color = MeanRgb(iris.map(f64::from));

    let bg = [rng.random_range(40..200u8); 3];
    let mut photo = Image::filled(3, height, width, 0u8);
    paint(&mut photo, &bg, |_, _| true);
    let mut sketch = Image::filled(1, height, width, 255u8);
    let ink = match style {
        Style::Style1 => 40u8,
        Style::Style2 => 90,
        Style::Style3 => 0,
    };
    let t = (w / 40.0).max(1.0);

    if attributes.has_hair {
        let hair = hair_rgb(attributes.hair_color.expect("has hair"));
        let cap = ellipse(fx, fy - 0.12 * h, frx * 1.12, fry * 0.9);
        paint(&mut photo, &hair, &cap);
        let shade = if style == Style::Style3 { 60 } else { 150 };
        paint(&mut sketch, &[shade], &cap);
    }
    paint(&mut photo, &skin, ellipse(fx, fy, frx, fry));
    paint(&mut sketch, &[255], ellipse(fx, fy, frx, fry));
    paint(&mut sketch, &[ink], ring(fx, fy, frx, fry, t));
    for &ex in &eyes {
        paint(&mut photo, &[245, 245, 245], ellipse(ex, eye_y, erx, ery));
        paint(&mut photo, &iris, ellipse(ex, eye_y, erx * 0.5, ery));
        paint(&mut sketch, &[ink], ring(ex, eye_y, erx, ery, t));
        paint(&mut sketch, &[ink], ellipse(ex, eye_y, erx * 0.4, ery * 0.8));
    }
    let nose_shadow = skin.map(|v| v.saturating_sub(40));
    paint(&mut photo, &nose_shadow, ellipse(nx, ny, 0.03 * w, 0.06 * h));
    paint(
        &mut sketch,
        &[ink.saturating_add(60)],
        ellipse(nx, ny + 0.04 * h, 0.035 * w, t * 0.6),
    );
    paint(&mut photo, &lip, ellipse(mx, my, mrx, mry));
    paint(&mut sketch, &[ink], ring(mx, my, mrx, mry, t));
    if attributes.earring {
        let gold = [230, 200, 60];
        for side in [-1.0, 1.0] {
            let ear = ellipse(fx + side * frx, fy + 0.05 * h, 0.025 * w, 0.025 * h);
            paint(&mut photo, &gold, &ear);
            paint(&mut sketch, &[ink], &ear);
        }
    }
    // Skin patch is clean skin by construction: repaint it flat.
    let r = attributes.skin_patch.rect().expect("valid patch");
    for (c, &v) in skin.iter().enumerate() {
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                photo.set(c, y, x, v);
            }
        }
    }

    let boxes = [
        RegionBox::new(eyes[0], eye_y, 0.2 * w, 0.12 * h),
        RegionBox::new(eyes[1], eye_y, 0.2 * w, 0.12 * h),
        RegionBox::new(nx, ny, 0.16 * w, 0.2 * h),
        RegionBox::new(mx, my, 0.3 * w, 0.12 * h),
    ];
    let regions = FaceRegions::clamped(boxes, (height, width)).expect("boxes overlap the image");
    SyntheticFace {
        photo,
        sketch,
        regions,
        attributes,
        style,
    }
}

/// `count` faces for `split`, deterministic in `seed`.
pub fn synth_split(count: usize, height: usize, width: usize, seed: u64, split: Split) -> Vec<(String, SyntheticFace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (split as u64 + 1).wrapping_mul(0x5851_f42d_4c95_7f2d));
    (0..count)
        .map(|i| {
            (
                format!("{}_{i:04}.png", split.name()),
                synth_face(i, height, width, &mut rng),
            )
        })
        .collect()
}

/// Write a complete dataset root: images, both annotation files and a
/// `regions.json` fixture.
pub fn write_dataset(root: &Path, spec: &SyntheticSpec) -> Result<()> {
    if spec.height < 32 || spec.width < 32 {
        return Err(Error::Usage("synthetic faces need at least 32x32 pixels".into()));
    }
    for dir in [PHOTO_DIR, SKETCH_DIR] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut fixture = FixtureRegions::default();
    for (split, count) in [(Split::Train, spec.train), (Split::Test, spec.test)] {
        let mut records = Vec::with_capacity(count);
        for (name, face) in synth_split(count, spec.height, spec.width, spec.seed, split) {
            write_png(&root.join(PHOTO_DIR).join(&name), &face.photo)?;
            write_png(&root.join(SKETCH_DIR).join(&name), &face.sketch)?;
            fixture
                .records
                .insert(dataset::pair_id_for(&name), RegionRecord::from_regions(&face.regions));
            records.push(AnnotationRecord {
                image_name: name,
                style: face.style,
                attributes: face.attributes,
            });
        }
        let path = root.join(dataset::annotation_file(split));
        let text = serde_json::to_string_pretty(&records).expect("records serialize");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    fixture.save(&root.join(FixtureRegions::DEFAULT_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_manifest;

    #[test]
    fn written_root_loads_and_covers_every_slice() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            train: 24,
            test: 2,
            ..Default::default()
        };
        write_dataset(dir.path(), &spec).unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.split(Split::Train).count(), 24);
        let stats = m.split_stats(Split::Train);
        assert!(stats.row().iter().all(|&c| c > 0), "{:?}", stats.counts);
        stats.check_consistency().unwrap();
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_split(3, 64, 64, 5, Split::Test);
        let b = synth_split(3, 64, 64, 5, Split::Test);
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            assert_eq!(x.photo, y.photo);
            assert_eq!(x.regions, y.regions);
        }
    }
}

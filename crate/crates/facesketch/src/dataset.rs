//! Paired photo/sketch dataset on disk: annotations, manifest, split iteration.
//!
//! Layout under a root directory:
//!
//! ```text
//! root/anno_train.json   root/anno_test.json
//! root/photo/<image_name>.{jpg,png}
//! root/sketch/<image_name>.{jpg,png}
//! ```
//!
//! Each annotation file is a JSON array of records carrying `image_name`,
//! `style` (1, 2 or 3) and the [`FaceAttributes`] fields. `image_name` may
//! contain `/` and may carry an extension; the pair id is the name without
//! extension and with `/` replaced by `_`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use facesketch_core::attributes::{FaceAttributes, Split, SplitStats, Style};
use facesketch_core::image::Image;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::imageio::{self, Letterbox};

pub const PHOTO_DIR: &str = "photo";
pub const SKETCH_DIR: &str = "sketch";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn annotation_file(split: Split) -> &'static str {
    match split {
        Split::Train => "anno_train.json",
        Split::Test => "anno_test.json",
    }
}

/// One annotation record as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_name: String,
    pub style: Style,
    #[serde(flatten)]
    pub attributes: FaceAttributes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub image_name: String,
    pub photo: PathBuf,
    pub sketch: PathBuf,
    pub attributes: FaceAttributes,
    pub style: Style,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// A loaded, validated sample.
#[derive(Clone, Debug)]
pub struct PhotoSketchPair {
    pub pair_id: String,
    /// Three channels.
    pub photo: Image<u8>,
    /// One channel.
    pub sketch: Image<u8>,
    pub style: Style,
    pub attributes: FaceAttributes,
    pub split: Split,
    /// Set when the images were letterboxed to a training resolution.
    pub letterbox: Option<Letterbox>,
}

pub fn pair_id_for(image_name: &str) -> String {
    let stem = match image_name.rsplit_once('.') {
        Some((stem, ext)) if IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) => stem,
        _ => image_name,
    };
    stem.replace(['/', '\\'], "_")
}

fn find_image(dir: &Path, image_name: &str) -> Option<PathBuf> {
    let direct = dir.join(image_name);
    if direct.is_file() {
        return Some(direct);
    }
    let stem = match image_name.rsplit_once('.') {
        Some((stem, ext)) if IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) => stem,
        _ => image_name,
    };
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, name: &str, at: &str) -> Result<T> {
    let v = obj.get(name).ok_or_else(|| Error::Schema {
        field: format!("{at}.{name}"),
        message: "missing required field".into(),
    })?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Schema {
        field: format!("{at}.{name}"),
        message: e.to_string(),
    })
}

const KNOWN_FIELDS: [&str; 11] = [
    "image_name",
    "style",
    "gender",
    "smile",
    "frontal_face",
    "has_hair",
    "hair_color",
    "earring",
    "skin_patch",
    "lip_color",
    "eye_color",
];

/// Parse one record, reporting errors with a field path rooted at `at`.
pub fn parse_record(value: &Value, at: &str) -> Result<AnnotationRecord> {
    let obj = value.as_object().ok_or_else(|| Error::Schema {
        field: at.to_owned(),
        message: "expected an object".into(),
    })?;
    for key in obj.keys() {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            log::warn!("{at}: ignoring unknown field {key:?}");
        }
    }
    let hair_color = match obj.get("hair_color") {
        None | Some(Value::Null) => None,
        Some(_) => Some(field(obj, "hair_color", at)?),
    };
    let style: u8 = field(obj, "style", at)?;
    let style = Style::from_label(style).map_err(|e| Error::Schema {
        field: format!("{at}.style"),
        message: e.to_string(),
    })?;
    let attributes = FaceAttributes {
        gender: field(obj, "gender", at)?,
        smile: field(obj, "smile", at)?,
        frontal_face: field(obj, "frontal_face", at)?,
        has_hair: field(obj, "has_hair", at)?,
        hair_color,
        earring: field(obj, "earring", at)?,
        skin_patch: field(obj, "skin_patch", at)?,
        lip_color: field(obj, "lip_color", at)?,
        eye_color: field(obj, "eye_color", at)?,
    };
    attributes.validate().map_err(|(name, e)| Error::Schema {
        field: format!("{at}.{name}"),
        message: e.to_string(),
    })?;
    Ok(AnnotationRecord {
        image_name: field(obj, "image_name", at)?,
        style,
        attributes,
    })
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Schema {
        field: name.clone(),
        message: e.to_string(),
    })?;
    let items = doc.as_array().ok_or_else(|| Error::Schema {
        field: name.clone(),
        message: "expected a JSON array of records".into(),
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| parse_record(v, &format!("{name}[{i}]")))
        .collect()
}

/// Read and validate both annotation files under `root`.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for split in [Split::Train, Split::Test] {
        let records = read_annotations(&root.join(annotation_file(split)))?;
        for rec in records {
            let pair_id = pair_id_for(&rec.image_name);
            if !seen.insert(pair_id.clone()) {
                return Err(Error::pair(&pair_id, "duplicate pair id"));
            }
            let photo = find_image(&root.join(PHOTO_DIR), &rec.image_name)
                .ok_or_else(|| Error::pair(&pair_id, format!("photo {} not found", rec.image_name)))?;
            let sketch = find_image(&root.join(SKETCH_DIR), &rec.image_name)
                .ok_or_else(|| Error::pair(&pair_id, format!("sketch {} not found", rec.image_name)))?;
            entries.push(ManifestEntry {
                pair_id,
                image_name: rec.image_name,
                photo,
                sketch,
                attributes: rec.attributes,
                style: rec.style,
                split,
            });
        }
    }
    Ok(DatasetManifest {
        root: root.to_owned(),
        entries,
    })
}

/// Write the annotation files for `manifest` under `root`.
pub fn write_annotations(manifest: &DatasetManifest, root: &Path) -> Result<()> {
    for split in [Split::Train, Split::Test] {
        let records: Vec<AnnotationRecord> = manifest
            .split(split)
            .map(|e| AnnotationRecord {
                image_name: e.image_name.clone(),
                style: e.style,
                attributes: e.attributes.clone(),
            })
            .collect();
        let path = root.join(annotation_file(split));
        let text = serde_json::to_string_pretty(&records).expect("records serialize");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, pair_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.pair_id == pair_id)
    }

    pub fn split_stats(&self, split: Split) -> SplitStats {
        compute_split_stats(self, split)
    }
}

pub fn compute_split_stats(manifest: &DatasetManifest, split: Split) -> SplitStats {
    SplitStats::tally(split, manifest.split(split).map(|e| (&e.attributes, e.style)))
}

/// Entries of `split` in manifest order, or shuffled by `seed`.
pub fn split_order(manifest: &DatasetManifest, split: Split, seed: Option<u64>) -> Vec<&ManifestEntry> {
    let mut entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    if let Some(seed) = seed {
        entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    entries
}

/// Lazily load every pair of `split`; see [`load_pair`] for `resolution`.
pub fn iterate_split<'a>(
    manifest: &'a DatasetManifest,
    split: Split,
    shuffle_seed: Option<u64>,
    resolution: Option<usize>,
) -> impl Iterator<Item = Result<PhotoSketchPair>> + 'a {
    split_order(manifest, split, shuffle_seed)
        .into_iter()
        .map(move |e| load_pair(e, resolution))
}

/// Load one pair. With `resolution`, both images are letterboxed onto a
/// square canvas: photos padded black, sketches padded white.
pub fn load_pair(entry: &ManifestEntry, resolution: Option<usize>) -> Result<PhotoSketchPair> {
    let with_id = |e: Error| match e {
        Error::Pair { .. } => e,
        other => Error::pair(&entry.pair_id, other.to_string()),
    };
    let photo = imageio::read_rgb(&entry.photo).map_err(with_id)?;
    let sketch = imageio::read_gray(&entry.sketch).map_err(with_id)?;
    if photo.dims() != sketch.dims() {
        return Err(Error::pair(
            &entry.pair_id,
            format!("photo is {:?} but sketch is {:?}", photo.dims(), sketch.dims()),
        ));
    }
    entry
        .attributes
        .check_bounds(photo.height(), photo.width())
        .map_err(|e| Error::pair(&entry.pair_id, e.to_string()))?;
    let letterbox = resolution.map(|r| Letterbox::fit(photo.dims(), r));
    let (photo, sketch) = match &letterbox {
        Some(lb) => (lb.apply(&photo, 0), lb.apply(&sketch, 255)),
        None => (photo, sketch),
    };
    Ok(PhotoSketchPair {
        pair_id: entry.pair_id.clone(),
        photo,
        sketch,
        style: entry.style,
        attributes: entry.attributes.clone(),
        split: entry.split,
        letterbox,
    })
}

/// The annotated skin sample, cropped from the photo.
pub fn load_skin_patch(pair: &PhotoSketchPair) -> Result<Image<u8>> {
    let rect = pair
        .attributes
        .skin_patch
        .rect()
        .map_err(|e| Error::pair(&pair.pair_id, e.to_string()))?;
    let rect = match &pair.letterbox {
        Some(lb) => lb.rect(rect),
        None => rect,
    };
    pair.photo
        .crop(rect)
        .map_err(|e| Error::pair(&pair.pair_id, e.to_string()))
}

/// Stats as a fixed-width text table, one row per split.
pub fn stats_table(stats: &[SplitStats]) -> String {
    use facesketch_core::attributes::SLICE_KEYS;
    let mut out = format!("{:<6} {:>6}", "split", "total");
    for k in SLICE_KEYS {
        out.push_str(&format!(" {k:>6}"));
    }
    out.push('\n');
    for s in stats {
        out.push_str(&format!("{:<6} {:>6}", s.split.name(), s.total));
        for v in s.row() {
            out.push_str(&format!(" {v:>6}"));
        }
        out.push('\n');
    }
    out
}

/// Count of pairs by split, for summaries.
pub fn split_sizes(manifest: &DatasetManifest) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for e in &manifest.entries {
        *m.entry(e.split.name()).or_insert(0) += 1;
    }
    m
}

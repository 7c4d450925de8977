//! Sources of facial key regions.
//!
//! Two providers ship: a fixture file mapping pair ids to stored boxes, and
//! an external command that receives an image path and prints the boxes.
//! Both speak the same JSON shape:
//!
//! ```json
//! {"left_eye": {"cx": 180, "cy": 220, "w": 60, "h": 30},
//!  "right_eye": {...}, "nose": {...}, "mouth": {...}}
//! ```
//!
//! Coordinates refer to the image as stored on disk. Returned regions are
//! clamped into the image.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use facesketch_core::regions::{FaceRegions, RegionBox};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub left_eye: RegionBox,
    pub right_eye: RegionBox,
    pub nose: RegionBox,
    pub mouth: RegionBox,
}

impl RegionRecord {
    pub fn boxes(&self) -> [RegionBox; 4] {
        [self.left_eye, self.right_eye, self.nose, self.mouth]
    }

    pub fn from_regions(r: &FaceRegions) -> Self {
        RegionRecord {
            left_eye: r.left_eye,
            right_eye: r.right_eye,
            nose: r.nose,
            mouth: r.mouth,
        }
    }
}

/// What a provider is asked about.
#[derive(Clone, Copy, Debug)]
pub struct DetectQuery<'a> {
    pub pair_id: &'a str,
    pub image_path: &'a Path,
    /// `(height, width)` of the stored image.
    pub dims: (usize, usize),
}

pub trait RegionProvider {
    fn detect(&self, query: &DetectQuery<'_>) -> Result<FaceRegions>;
}

/// Boxes read from a JSON file keyed by pair id.
#[derive(Clone, Debug, Default)]
pub struct FixtureRegions {
    pub records: BTreeMap<String, RegionRecord>,
}

impl FixtureRegions {
    pub const DEFAULT_FILE: &'static str = "regions.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = serde_json::from_str(&text).map_err(|e| Error::Schema {
            field: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(FixtureRegions { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.records).expect("records serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

impl RegionProvider for FixtureRegions {
    fn detect(&self, q: &DetectQuery<'_>) -> Result<FaceRegions> {
        let rec = self
            .records
            .get(q.pair_id)
            .ok_or_else(|| Error::pair(q.pair_id, "no regions in the fixture file"))?;
        FaceRegions::clamped(rec.boxes(), q.dims).map_err(|e| Error::pair(q.pair_id, e.to_string()))
    }
}

/// Runs `program [args..] <image path>` and parses its stdout. A non-zero
/// exit status means no face was found.
#[derive(Clone, Debug)]
pub struct CommandDetector {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CommandDetector {
    /// Split a command line on whitespace.
    pub fn parse(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Usage("empty detector command".into()))?;
        Ok(CommandDetector {
            program: program.into(),
            args: parts.map(str::to_owned).collect(),
        })
    }
}

impl RegionProvider for CommandDetector {
    fn detect(&self, q: &DetectQuery<'_>) -> Result<FaceRegions> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(q.image_path)
            .output()
            .map_err(|e| Error::Detection(format!("{}: cannot run {}: {e}", q.pair_id, self.program.display())))?;
        if !out.status.success() {
            return Err(Error::Detection(format!(
                "{}: detector exited with {}: {}",
                q.pair_id,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let rec: RegionRecord = serde_json::from_slice(&out.stdout)
            .map_err(|e| Error::Detection(format!("{}: unreadable detector output: {e}", q.pair_id)))?;
        FaceRegions::clamped(rec.boxes(), q.dims).map_err(|e| Error::Detection(format!("{}: {e}", q.pair_id)))
    }
}

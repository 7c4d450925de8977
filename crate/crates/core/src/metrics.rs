//! Attribute-sliced aggregation of per-pair scores.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attributes::{slice_keys, FaceAttributes, Style, BINARY_PARTITIONS, SLICE_KEYS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceStat {
    pub count: usize,
    pub mean: f64,
}

/// One metric evaluated for one model over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub model: String,
    pub count: usize,
    pub overall: f64,
    /// Keyed by [`SLICE_KEYS`]; empty slices have count 0 and mean 0.
    pub slices: BTreeMap<String, SliceStat>,
}

/// A scored test pair.
#[derive(Clone, Debug)]
pub struct ScoredPair<'a> {
    pub attributes: &'a FaceAttributes,
    pub style: Style,
    pub score: f64,
}

impl MetricReport {
    pub fn aggregate<'a>(
        metric: &str,
        model: &str,
        scores: impl IntoIterator<Item = ScoredPair<'a>>,
    ) -> Result<MetricReport> {
        let mut sums: BTreeMap<&'static str, (usize, f64)> = SLICE_KEYS.iter().map(|k| (*k, (0, 0.0))).collect();
        let (mut count, mut total) = (0usize, 0.0);
        for s in scores {
            if !s.score.is_finite() {
                return Err(Error::Invalid(format!("{metric}: non-finite score {}", s.score)));
            }
            count += 1;
            total += s.score;
            for k in slice_keys(s.attributes, s.style) {
                let e = sums.get_mut(k).expect("known key");
                e.0 += 1;
                e.1 += s.score;
            }
        }
        if count == 0 {
            return Err(Error::Invalid(format!("{metric}: no scored pairs")));
        }
        let slices = sums
            .into_iter()
            .map(|(k, (n, sum))| {
                let mean = if n == 0 { 0.0 } else { sum / n as f64 };
                (String::from(k), SliceStat { count: n, mean })
            })
            .collect();
        Ok(MetricReport {
            metric: String::from(metric),
            model: String::from(model),
            count,
            overall: total / count as f64,
            slices,
        })
    }

    /// A report with only an overall figure, e.g. a published reference row.
    pub fn overall_only(metric: &str, model: &str, overall: f64) -> MetricReport {
        MetricReport {
            metric: String::from(metric),
            model: String::from(model),
            count: 0,
            overall,
            slices: BTreeMap::new(),
        }
    }

    pub fn slice(&self, key: &str) -> Option<SliceStat> {
        self.slices.get(key).copied()
    }

    /// Slice values in [`SLICE_KEYS`] order; `None` when absent.
    pub fn slice_row(&self) -> Vec<Option<SliceStat>> {
        SLICE_KEYS.iter().map(|k| self.slice(k)).collect()
    }

    /// Largest deviation between the overall mean and any binary partition's
    /// count-weighted recombination.
    pub fn partition_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (a, b) in BINARY_PARTITIONS {
            let (sa, sb) = match (self.slice(a), self.slice(b)) {
                (Some(sa), Some(sb)) => (sa, sb),
                _ => return Err(Error::Invalid(format!("report {} lacks slice {a} or {b}", self.model))),
            };
            let n = sa.count + sb.count;
            if n != self.count {
                return Err(Error::Invalid(format!(
                    "{a}/{b} counts {} + {} do not cover {} pairs",
                    sa.count, sb.count, self.count
                )));
            }
            let recombined = (sa.count as f64 * sa.mean + sb.count as f64 * sb.mean) / n as f64;
            worst = worst.max((recombined - self.overall).abs());
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::{Gender, MeanRgb, SkinPatch};

    fn attrs(male: bool, smile: bool) -> FaceAttributes {
        FaceAttributes {
            gender: if male { Gender::Male } else { Gender::Female },
            smile,
            frontal_face: true,
            has_hair: false,
            hair_color: None,
            earring: false,
            skin_patch: SkinPatch([0, 0, 4, 4]),
            lip_color: MeanRgb([1.0, 2.0, 3.0]),
            eye_color: MeanRgb([1.0, 2.0, 3.0]),
        }
    }

    #[test]
    fn single_pair_overall_is_its_score() {
        let a = attrs(true, false);
        let r = MetricReport::aggregate(
            "ssim",
            "m",
            [ScoredPair {
                attributes: &a,
                style: Style::Style1,
                score: 0.42,
            }],
        )
        .unwrap();
        assert_eq!(r.overall, 0.42);
        assert_eq!(r.slice("M").unwrap(), SliceStat { count: 1, mean: 0.42 });
        assert_eq!(r.slice("F").unwrap().count, 0);
        assert_eq!(r.slice_row().len(), 17);
    }

    #[test]
    fn partitions_recombine() {
        let pool = [attrs(true, true), attrs(false, true), attrs(false, false)];
        let scored = pool.iter().enumerate().map(|(i, a)| ScoredPair {
            attributes: a,
            style: Style::ALL[i],
            score: 0.1 * (i as f64 + 1.0),
        });
        let r = MetricReport::aggregate("ssim", "m", scored).unwrap();
        assert!(r.partition_error().unwrap() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(MetricReport::aggregate("ssim", "m", core::iter::empty()).is_err());
    }
}

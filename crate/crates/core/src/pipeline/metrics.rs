//! Jaccard similarity and the per-split metrics report.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::imagecore::BinaryMask;

/// Intersection and union pixel counts of a prediction/label pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub intersection: u64,
    pub union: u64,
}

impl Overlap {
    pub fn of(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        if !pred.same_dims(gt) {
            bail!(
                Argument,
                "prediction is {}x{} but label is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            );
        }
        let mut o = Overlap::default();
        for (&a, &b) in pred.data().iter().zip(gt.data()) {
            o.intersection += (a & b) as u64;
            o.union += (a | b) as u64;
        }
        Ok(o)
    }

    /// `|A∩B| / |A∪B|`, with an empty union scored as perfect agreement.
    pub fn jsi(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

pub fn jsi(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(Overlap::of(pred, gt)?.jsi())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub jsi: f64,
    pub intersection: u64,
    pub union: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageScore>,
    pub mean_jsi: f64,
    pub pooled_jsi: f64,
    /// Images whose prediction and label were both empty (scored 1.0).
    pub empty_pairs: Vec<String>,
    pub config: serde_json::Value,
    pub checkpoint_id: String,
}

impl MetricsReport {
    pub fn from_scores(
        scores: Vec<(String, Overlap)>,
        config: serde_json::Value,
        checkpoint_id: impl Into<String>,
    ) -> Self {
        let mut total = Overlap::default();
        let mut empty_pairs = Vec::new();
        let per_image: Vec<ImageScore> = scores
            .into_iter()
            .map(|(image_id, o)| {
                total.intersection += o.intersection;
                total.union += o.union;
                if o.union == 0 {
                    empty_pairs.push(image_id.clone());
                }
                ImageScore {
                    image_id,
                    jsi: o.jsi(),
                    intersection: o.intersection,
                    union: o.union,
                }
            })
            .collect();
        let mean_jsi = if per_image.is_empty() {
            0.0
        } else {
            per_image.iter().map(|s| s.jsi).sum::<f64>() / per_image.len() as f64
        };
        if !empty_pairs.is_empty() {
            log::info!("{} empty/empty pairs scored 1.0", empty_pairs.len());
        }
        Self {
            per_image,
            mean_jsi,
            pooled_jsi: total.jsi(),
            empty_pairs,
            config,
            checkpoint_id: checkpoint_id.into(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Columns `image_id,jsi`; footer rows `mean` and `pooled`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        writeln!(out, "image_id,jsi").unwrap();
        for s in &self.per_image {
            writeln!(out, "{},{:.6}", s.image_id, s.jsi).unwrap();
        }
        writeln!(out, "mean,{:.6}", self.mean_jsi).unwrap();
        writeln!(out, "pooled,{:.6}", self.pooled_jsi).unwrap();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(1, bits.len(), bits.to_vec()).unwrap()
    }

    #[test]
    fn basic_values() {
        let a = mask(&[1, 1, 0, 1]);
        assert_eq!(jsi(&a, &a).unwrap(), 1.0);
        assert_eq!(jsi(&mask(&[1, 1, 0, 0]), &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        let a = mask(&[1, 1, 1, 1, 0, 0]);
        let b = mask(&[0, 0, 1, 1, 1, 1]);
        assert!((jsi(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(jsi(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert!(jsi(&mask(&[0, 0]), &mask(&[0, 0, 0])).is_err());
    }

    #[test]
    fn pooled_is_ratio_of_sums() {
        let scores = vec![
            ("a".to_string(), Overlap { intersection: 1, union: 4 }),
            ("b".to_string(), Overlap { intersection: 3, union: 4 }),
            ("c".to_string(), Overlap { intersection: 0, union: 0 }),
        ];
        let r = MetricsReport::from_scores(scores, serde_json::Value::Null, "x");
        assert!((r.pooled_jsi - 0.5).abs() < 1e-15);
        assert!((r.mean_jsi - (0.25 + 0.75 + 1.0) / 3.0).abs() < 1e-15);
        assert_eq!(r.empty_pairs, vec!["c".to_string()]);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let r = MetricsReport::from_scores(
            vec![("img".into(), Overlap { intersection: 1, union: 2 })],
            serde_json::Value::Null,
            "x",
        );
        let p = dir.path().join("m.csv");
        r.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "image_id,jsi\nimg,0.500000\nmean,0.500000\npooled,0.500000\n");
    }

    proptest! {
        #[test]
        fn jsi_properties(a in proptest::collection::vec(0u8..2, 36), b in proptest::collection::vec(0u8..2, 36)) {
            let (ma, mb) = (BinaryMask::new(6, 6, a).unwrap(), BinaryMask::new(6, 6, b).unwrap());
            let ab = jsi(&ma, &mb).unwrap();
            prop_assert_eq!(ab, jsi(&mb, &ma).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            let o = Overlap::of(&ma, &mb).unwrap();
            if o.union > 0 {
                prop_assert_eq!(ab == 1.0, ma == mb);
                let bound = o.intersection as f64 / (ma.count() + mb.count()) as f64;
                prop_assert!(ab >= bound);
            }
        }
    }
}

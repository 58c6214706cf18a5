//! k-of-n majority voting over annotator masks, plus pairwise agreement.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::imagecore::{load_mask, BinaryMask};
use crate::pipeline::metrics::jsi;

/// Votes required for a pixel to survive fusion with a three-annotator panel.
pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    image_id: String,
    masks: Vec<BinaryMask>,
}

impl AnnotationSet {
    pub fn new(image_id: impl Into<String>, masks: Vec<BinaryMask>) -> Result<Self> {
        let image_id = image_id.into();
        let Some(first) = masks.first() else {
            bail!(Argument, "annotation set {image_id} has no masks");
        };
        if let Some((i, m)) = masks.iter().enumerate().find(|(_, m)| !m.same_dims(first)) {
            bail!(
                Argument,
                "{image_id}: annotator {} mask is {}x{}, annotator 1 is {}x{}",
                i + 1,
                m.height(),
                m.width(),
                first.height(),
                first.width()
            );
        }
        Ok(Self { image_id, masks })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Pixel is set iff at least `k` annotators set it.
pub fn majority_vote(ann: &AnnotationSet, k: usize) -> Result<BinaryMask> {
    let n = ann.len();
    if k == 0 || k > n {
        bail!(Argument, "k = {k} must lie in 1..={n}");
    }
    let first = &ann.masks[0];
    let mut votes = vec![0usize; first.data().len()];
    for m in &ann.masks {
        for (v, &b) in votes.iter_mut().zip(m.data()) {
            *v += b as usize;
        }
    }
    let data = votes.into_iter().map(|v| u8::from(v >= k)).collect();
    BinaryMask::new(first.height(), first.width(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub image_id: String,
    pub pairwise_jsi: Vec<Vec<f64>>,
    pub mean_offdiag: f64,
}

pub fn pairwise_agreement(ann: &AnnotationSet) -> Result<AgreementReport> {
    let n = ann.len();
    if n < 2 {
        bail!(Argument, "agreement needs at least two annotators, got {n}");
    }
    let mut m = vec![vec![1.0; n]; n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = jsi(&ann.masks[i], &ann.masks[j])?;
            m[i][j] = v;
            m[j][i] = v;
            sum += v;
        }
    }
    Ok(AgreementReport {
        image_id: ann.image_id.clone(),
        pairwise_jsi: m,
        mean_offdiag: sum / (n * (n - 1) / 2) as f64,
    })
}

pub fn annotator_file_name(image_id: &str, index: usize) -> String {
    format!("{image_id}.a{index}.png")
}

pub fn fused_file_name(image_id: &str) -> String {
    format!("{image_id}.gt.png")
}

/// Loads `<image_id>.a1.png`, `<image_id>.a2.png`, ... until the first gap.
pub fn load_annotation_set(dir: impl AsRef<Path>, image_id: &str) -> Result<AnnotationSet> {
    let dir = dir.as_ref();
    let mut masks = Vec::new();
    for i in 1.. {
        let path = dir.join(annotator_file_name(image_id, i));
        if !path.exists() {
            break;
        }
        let m = load_mask(&path)?;
        if let Some(first) = masks.first() {
            let first: &BinaryMask = first;
            if !m.same_dims(first) {
                bail!(
                    Format,
                    "{} is {}x{}, expected {}x{}",
                    path.display(),
                    m.height(),
                    m.width(),
                    first.height(),
                    first.width()
                );
            }
        }
        masks.push(m);
    }
    if masks.is_empty() {
        return Err(Error::NotFound(format!(
            "no annotator masks {} in {}",
            annotator_file_name(image_id, 1).replace(".a1.", ".a<i>."),
            dir.display()
        )));
    }
    AnnotationSet::new(image_id, masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::save_image;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(1, bits.len(), bits.to_vec()).unwrap()
    }

    #[test]
    fn two_of_three() {
        let ann = AnnotationSet::new("x", vec![mask(&[1, 1]), mask(&[1, 0]), mask(&[0, 0])]).unwrap();
        assert_eq!(majority_vote(&ann, 2).unwrap().data(), &[1, 0]);
    }

    #[test]
    fn all_zero_stays_zero() {
        let ann = AnnotationSet::new("x", vec![mask(&[0; 5]); 3]).unwrap();
        for k in 1..=3 {
            assert_eq!(majority_vote(&ann, k).unwrap().count(), 0);
        }
    }

    #[test]
    fn truth_table_all_patterns() {
        // one pixel per vote pattern
        let masks: Vec<BinaryMask> = (0..3)
            .map(|a| mask(&(0..8u8).map(|p| (p >> a) & 1).collect::<Vec<_>>()))
            .collect();
        let ann = AnnotationSet::new("tt", masks).unwrap();
        let out = majority_vote(&ann, 2).unwrap();
        for p in 0..8u8 {
            let want = p.count_ones() >= 2;
            assert_eq!(out.data()[p as usize] == 1, want, "pattern {p:03b}");
        }
    }

    #[test]
    fn argument_errors() {
        let ann = AnnotationSet::new("x", vec![mask(&[1]); 3]).unwrap();
        assert!(majority_vote(&ann, 0).is_err());
        assert!(majority_vote(&ann, 4).is_err());
        assert!(AnnotationSet::new("x", vec![mask(&[1]), mask(&[1, 0])]).is_err());
        assert!(AnnotationSet::new("x", vec![]).is_err());
    }

    #[test]
    fn agreement_values() {
        let a = mask(&[1, 1, 1, 1, 0, 0]);
        let b = mask(&[0, 0, 1, 1, 1, 1]);
        let r = pairwise_agreement(&AnnotationSet::new("x", vec![a.clone(), b]).unwrap()).unwrap();
        assert!((r.pairwise_jsi[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.pairwise_jsi[0][0], 1.0);

        let same = pairwise_agreement(&AnnotationSet::new("x", vec![a.clone(); 3]).unwrap()).unwrap();
        assert!(same.pairwise_jsi.iter().flatten().all(|v| *v == 1.0));
        assert_eq!(same.mean_offdiag, 1.0);

        let disjoint = pairwise_agreement(
            &AnnotationSet::new("x", vec![mask(&[1, 0]), mask(&[0, 1])]).unwrap(),
        )
        .unwrap();
        assert_eq!(disjoint.pairwise_jsi[1][0], 0.0);

        assert!(pairwise_agreement(&AnnotationSet::new("x", vec![a]).unwrap()).is_err());
    }

    #[test]
    fn loads_by_naming_convention() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_annotation_set(dir.path(), "f"),
            Err(Error::NotFound(_))
        ));
        for i in 1..=3 {
            save_image(&mask(&[1, 0, (i % 2) as u8]), dir.path().join(annotator_file_name("f", i))).unwrap();
        }
        let ann = load_annotation_set(dir.path(), "f").unwrap();
        assert_eq!(ann.len(), 3);

        save_image(&mask(&[1, 1]), dir.path().join(annotator_file_name("g", 1))).unwrap();
        let single = load_annotation_set(dir.path(), "g").unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(majority_vote(&single, 1).unwrap(), single.masks()[0]);

        save_image(&mask(&[1]), dir.path().join(annotator_file_name("g", 2))).unwrap();
        let err = load_annotation_set(dir.path(), "g").unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("g.a2.png")), "{err}");
    }

    #[test]
    fn gray_levels_binarize() {
        let dir = tempfile::tempdir().unwrap();
        let buf: image::GrayImage = image::ImageBuffer::from_raw(2, 1, vec![120, 130]).unwrap();
        buf.save(dir.path().join(annotator_file_name("h", 1))).unwrap();
        let ann = load_annotation_set(dir.path(), "h").unwrap();
        assert_eq!(ann.masks()[0].data(), &[0, 1]);
    }

    fn or_and(masks: &[BinaryMask]) -> (Vec<u8>, Vec<u8>) {
        let n = masks[0].data().len();
        let or = (0..n).map(|i| masks.iter().map(|m| m.data()[i]).max().unwrap()).collect();
        let and = (0..n).map(|i| masks.iter().map(|m| m.data()[i]).min().unwrap()).collect();
        (or, and)
    }

    proptest! {
        #[test]
        fn vote_properties(
            raw in proptest::collection::vec(proptest::collection::vec(0u8..2, 25), 1..6),
            k_seed in 0usize..100,
        ) {
            let masks: Vec<BinaryMask> = raw.into_iter().map(|d| BinaryMask::new(5, 5, d).unwrap()).collect();
            let n = masks.len();
            let k = 1 + k_seed % n;
            let ann = AnnotationSet::new("p", masks.clone()).unwrap();
            let out = majority_vote(&ann, k).unwrap();
            let (or, and) = or_and(&masks);

            prop_assert_eq!(majority_vote(&ann, 1).unwrap().data().to_vec(), or.clone());
            prop_assert_eq!(majority_vote(&ann, n).unwrap().data().to_vec(), and.clone());
            for i in 0..25 {
                prop_assert!(out.data()[i] <= or[i] && out.data()[i] >= and[i]);
            }

            let mut rev = masks.clone();
            rev.reverse();
            prop_assert_eq!(&majority_vote(&AnnotationSet::new("p", rev).unwrap(), k).unwrap(), &out);

            let mut extra = masks;
            extra.push(BinaryMask::ones(5, 5));
            let more = majority_vote(&AnnotationSet::new("p", extra).unwrap(), k).unwrap();
            for i in 0..25 {
                prop_assert!(more.data()[i] >= out.data()[i]);
            }
        }
    }
}

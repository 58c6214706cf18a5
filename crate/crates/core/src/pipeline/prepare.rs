//! Manifest-wide preparation: texture weak labels and fused ground truth,
//! written next to each image and referenced back into the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::{
    fused_file_name, load_annotation_set, majority_vote, pairwise_agreement, AgreementReport, AnnotationSet,
};
use crate::imagecore::{load_image, load_mask, save_image};
use crate::pipeline::dataset::DatasetManifest;
use crate::weaklabel::{weak_label, TextureConfig};

fn sibling(rel: &Path, name: String) -> PathBuf {
    rel.parent().map(|p| p.join(&name)).unwrap_or_else(|| name.into())
}

/// Writes `<id>.tex.png` beside every image and records it in the manifest.
pub fn weaklabel_manifest(manifest: &DatasetManifest, cfg: &TextureConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut out = manifest.clone();
    for s in &mut out.samples {
        let img = load_image(manifest.resolve(&s.image_path))?;
        let face = match &s.face_mask_path {
            Some(p) => Some(load_mask(manifest.resolve(p))?),
            None => None,
        };
        let tex = weak_label(&img, face.as_ref(), cfg)?;
        let rel = sibling(&s.image_path, format!("{}.tex.png", s.image_id));
        save_image(&tex, manifest.resolve(&rel))?;
        s.weak_label_path = Some(rel);
    }
    out.save()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub k: usize,
    pub mean_pairwise_jsi: Option<f64>,
    pub images: Vec<AgreementReport>,
}

/// k-of-n vote per image into `<id>.gt.png`; annotator files come from the
/// manifest when listed, otherwise from the `<id>.a<i>.png` convention in
/// the image's directory.
pub fn fuse_manifest(manifest: &DatasetManifest, k: usize) -> Result<(DatasetManifest, AgreementSummary)> {
    let mut out = manifest.clone();
    let mut images = Vec::new();
    for s in &mut out.samples {
        let ann = if s.annotator_mask_paths.is_empty() {
            let dir = manifest.resolve(s.image_path.parent().unwrap_or(Path::new("")));
            load_annotation_set(dir, &s.image_id)?
        } else {
            let masks = s
                .annotator_mask_paths
                .iter()
                .map(|p| load_mask(manifest.resolve(p)))
                .collect::<Result<Vec<_>>>()?;
            AnnotationSet::new(s.image_id.clone(), masks)?
        };
        let fused = majority_vote(&ann, k)?;
        let rel = sibling(&s.image_path, fused_file_name(&s.image_id));
        save_image(&fused, manifest.resolve(&rel))?;
        s.fused_gt_path = Some(rel);
        if ann.len() >= 2 {
            images.push(pairwise_agreement(&ann)?);
        }
    }
    let mean_pairwise_jsi =
        (!images.is_empty()).then(|| images.iter().map(|r| r.mean_offdiag).sum::<f64>() / images.len() as f64);
    out.save()?;
    Ok((
        out,
        AgreementSummary {
            k,
            mean_pairwise_jsi,
            images,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{synth_dataset, SynthConfig};

    #[test]
    fn prepares_and_references_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            count: 3,
            size: 32,
            seed: 2,
            ..SynthConfig::default()
        };
        let m = synth_dataset(&cfg, dir.path()).unwrap();
        let m = weaklabel_manifest(&m, &TextureConfig::default()).unwrap();
        let (m, summary) = fuse_manifest(&m, 2).unwrap();
        m.validate().unwrap();
        assert_eq!(summary.images.len(), 3);
        let reloaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(reloaded.samples, m.samples);
        for s in &m.samples {
            assert!(s.fused_gt_path.is_some() && s.weak_label_path.is_some());
        }

        // convention-based discovery agrees with the listed files
        let mut bare = m.clone();
        bare.samples.iter_mut().for_each(|s| s.annotator_mask_paths.clear());
        let before = std::fs::read(dir.path().join("samples/face_0000.gt.png")).unwrap();
        fuse_manifest(&bare, 2).unwrap();
        assert_eq!(before, std::fs::read(dir.path().join("samples/face_0000.gt.png")).unwrap());
    }
}

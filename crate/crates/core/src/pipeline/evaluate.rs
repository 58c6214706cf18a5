//! Test-split scoring with per-image and pooled JSI, plus overlay images.

use std::path::{Path, PathBuf};

use crate::error::{bail, Error, Result};
use crate::imagecore::{save_image, to_grayscale, BinaryMask, Image};
use crate::pipeline::dataset::{LoadedDataset, LoadedSample};
use crate::pipeline::metrics::{MetricsReport, Overlap};
use crate::unet::{predict_wrinkles, Stage, UNet};

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Echoed into the report.
    pub config: serde_json::Value,
    pub checkpoint_id: String,
    /// When set, receives `metrics.json`, `metrics.csv` and `overlays/<id>.png`.
    pub out_dir: Option<PathBuf>,
}

/// Dimmed grayscale with the label in red and the prediction in green
/// (agreement shows as yellow).
pub fn overlay(image: &Image, gt: &BinaryMask, pred: &BinaryMask) -> Result<Image> {
    if !gt.same_dims(pred) || gt.height() != image.height() || gt.width() != image.width() {
        bail!(Argument, "overlay inputs differ in size");
    }
    let gray = to_grayscale(image);
    let mut data = Vec::with_capacity(gray.data().len() * 3);
    for ((&g, &t), &p) in gray.data().iter().zip(gt.data()).zip(pred.data()) {
        let base = 0.5 * g;
        data.push(if t == 1 { 1.0 } else { base });
        data.push(if p == 1 { 1.0 } else { base });
        data.push(if t == 1 || p == 1 { 0.0 } else { base });
    }
    Image::new(gray.height(), gray.width(), 3, data)
}

fn predict(model: &UNet<f32>, s: &LoadedSample) -> Result<BinaryMask> {
    Ok(predict_wrinkles(model, &s.image, &s.texture)?.1)
}

/// Scores `model` on `ids` against their fused ground truth.
pub fn evaluate(model: &UNet<f32>, data: &LoadedDataset, ids: &[String], opts: &EvalOptions) -> Result<MetricsReport> {
    if model.stage() != Stage::Finetune {
        bail!(
            Usage,
            "evaluate needs a finetune-stage checkpoint, got a {} checkpoint",
            model.stage()
        );
    }
    data.require_gt(ids)?;
    let overlay_dir = match &opts.out_dir {
        Some(d) => {
            let o = d.join("overlays");
            std::fs::create_dir_all(&o).map_err(|e| Error::io(&o, e))?;
            Some(o)
        }
        None => None,
    };
    let mut scores = Vec::with_capacity(ids.len());
    for s in data.select(ids)? {
        let gt = s.gt.as_ref().expect("gt checked");
        let pred = predict(model, s)?;
        scores.push((s.image_id.clone(), Overlap::of(&pred, gt)?));
        if let Some(o) = &overlay_dir {
            save_image(&overlay(&s.image, gt, &pred)?, o.join(format!("{}.png", s.image_id)))?;
        }
    }
    let report = MetricsReport::from_scores(scores, opts.config.clone(), opts.checkpoint_id.clone());
    if let Some(d) = &opts.out_dir {
        write_report(&report, d)?;
    }
    Ok(report)
}

pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    report.write_json(dir.join("metrics.json"))?;
    report.write_csv(dir.join("metrics.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::dataset::LoadedSample;
    use crate::unet::{build_unet, UNetConfig};
    use crate::weaklabel::TextureConfig;
    use crate::{Image, TextureMap};

    fn sample(id: &str, gt: BinaryMask) -> LoadedSample {
        let (h, w) = (gt.height(), gt.width());
        LoadedSample {
            image_id: id.into(),
            image: Image::filled(h, w, 3, 0.5).unwrap(),
            face: BinaryMask::ones(h, w),
            texture: TextureMap::new(h, w, vec![0.0; h * w]).unwrap(),
            weak_label: TextureMap::new(h, w, vec![0.0; h * w]).unwrap(),
            gt: Some(gt),
        }
    }

    /// A model whose head always favours the background class.
    fn background_model() -> UNet<f32> {
        let mut m = build_unet::<f32>(&UNetConfig::finetune(2, 1, 3)).unwrap();
        let head = m.graph_mut().convs_mut().last().unwrap();
        head.weight.value.iter_mut().for_each(|v| *v = 0.0);
        head.bias.value.copy_from_slice(&[1.0, -1.0]);
        m
    }

    #[test]
    fn all_background_scores_zero_on_nonempty_labels() {
        let gts: Vec<BinaryMask> = (0..3)
            .map(|i| BinaryMask::from_fn(8, 8, |y, x| (y + x + i) % 5 == 0))
            .collect();
        let data = LoadedDataset::from_samples(
            TextureConfig::default(),
            gts.iter().enumerate().map(|(i, g)| sample(&format!("s{i}"), g.clone())).collect(),
        );
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let r = evaluate(&background_model(), &data, &ids, &EvalOptions::default()).unwrap();
        assert!(r.per_image.iter().all(|s| s.jsi == 0.0));
        assert_eq!(r.mean_jsi, 0.0);
        assert_eq!(r.pooled_jsi, 0.0);
    }

    #[test]
    fn pretrain_stage_is_a_usage_error() {
        let data = LoadedDataset::from_samples(TextureConfig::default(), vec![]);
        let m = build_unet::<f32>(&UNetConfig::pretrain(2, 1, 3)).unwrap();
        let err = evaluate(&m, &data, &[], &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }

    #[test]
    fn writes_reports_and_overlays() {
        let dir = tempfile::tempdir().unwrap();
        let gt = BinaryMask::from_fn(8, 8, |y, _| y == 3);
        let data = LoadedDataset::from_samples(TextureConfig::default(), vec![sample("a", gt)]);
        let opts = EvalOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..EvalOptions::default()
        };
        evaluate(&background_model(), &data, &["a".into()], &opts).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv, "image_id,jsi\na,0.000000\nmean,0.000000\npooled,0.000000\n");
        let ov = crate::imagecore::load_image(dir.path().join("overlays/a.png")).unwrap();
        assert_eq!(ov.get(3, 0, 0), 1.0);
        assert_eq!(ov.get(3, 0, 1), 64.0 / 255.0);
        assert_eq!(ov.get(0, 0, 2), 64.0 / 255.0);
    }

    #[test]
    fn missing_gt_is_reported_by_id() {
        let mut s = sample("nolabel", BinaryMask::zeros(8, 8));
        s.gt = None;
        let data = LoadedDataset::from_samples(TextureConfig::default(), vec![s]);
        let err = evaluate(&background_model(), &data, &["nolabel".into()], &EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("nolabel"), "{err}");
    }
}

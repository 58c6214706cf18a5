//! Dataset manifest, train/val/test splits, fraction subsets, and in-memory
//! loading of the samples a training run needs.
//!
//! Manifest JSON (paths relative to the manifest's directory):
//!
//! ```json
//! {
//!   "seed": 7,
//!   "samples": [
//!     {
//!       "image_id": "face_0000",
//!       "image_path": "samples/face_0000.png",
//!       "face_mask_path": "samples/face_0000.face.png",
//!       "annotator_mask_paths": ["samples/face_0000.a1.png", "..."],
//!       "fused_gt_path": "samples/face_0000.gt.png",
//!       "weak_label_path": "samples/face_0000.tex.png",
//!       "true_mask_path": "samples/face_0000.truth.png"
//!     }
//!   ]
//! }
//! ```
//!
//! Optional paths are omitted when absent. Splits JSON holds the three id
//! lists plus the ratios and seed that produced them.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::imagecore::{load_image, load_mask, BinaryMask, Image, TextureMap};
use crate::weaklabel::{fallback_face_mask, weak_label, TextureConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub image_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_mask_path: Option<PathBuf>,
    #[serde(default)]
    pub annotator_mask_paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_gt_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_label_path: Option<PathBuf>,
    /// Noise-free wrinkle mask; only synthetic datasets have one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Writes the manifest as `<root>/manifest.json` and returns that path.
    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.image_id.clone()).collect()
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.image_id == id)
    }

    /// Unique ids and every referenced file present.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut missing = Vec::new();
        for s in &self.samples {
            if !seen.insert(&s.image_id) {
                bail!(Argument, "duplicate image id {}", s.image_id);
            }
            let paths = std::iter::once(&s.image_path)
                .chain(&s.face_mask_path)
                .chain(&s.annotator_mask_paths)
                .chain(&s.fused_gt_path)
                .chain(&s.weak_label_path)
                .chain(&s.true_mask_path);
            for p in paths {
                if !self.resolve(p).exists() {
                    missing.push(p.display().to_string());
                }
            }
        }
        if !missing.is_empty() {
            bail!(NotFound, "manifest references missing files: {}", missing.join(", "));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

impl Splits {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, name: &str) -> Result<&[String]> {
        Ok(match name {
            "train" => &self.train,
            "val" => &self.val,
            "test" => &self.test,
            other => bail!(Argument, "unknown split {other:?} (train, val, test)"),
        })
    }
}

/// Seeded shuffle then contiguous train/val/test cut; val and test get
/// `floor(ratio * n)` ids and train takes the remainder.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if manifest.samples.is_empty() {
        bail!(Argument, "cannot split an empty manifest");
    }
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        bail!(Argument, "split ratios {ratios:?} must be non-negative and sum to 1");
    }
    let mut ids = manifest.ids();
    let n = ids.len();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (ratios[1] * n as f64 + 1e-9).floor() as usize;
    let n_test = (ratios[2] * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(Splits {
        train: ids,
        val,
        test,
        ratios,
        seed,
    })
}

/// `round(fraction * n)` ids from one seeded shuffle, so smaller fractions
/// are prefixes (subsets) of larger ones.
pub fn subset_fraction(train_ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(Argument, "fraction {fraction} must lie in (0, 1]");
    }
    let k = (fraction * train_ids.len() as f64).round() as usize;
    if k == 0 {
        bail!(
            Argument,
            "fraction {fraction} of {} training ids selects nothing",
            train_ids.len()
        );
    }
    let mut ids = train_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(k);
    Ok(ids)
}

/// One sample in memory, with its texture channel regenerated from the image.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub image_id: String,
    pub image: Image,
    pub face: BinaryMask,
    pub texture: TextureMap,
    pub weak_label: TextureMap,
    pub gt: Option<BinaryMask>,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub texture_config: TextureConfig,
    samples: BTreeMap<String, LoadedSample>,
}

impl LoadedDataset {
    pub fn load(manifest: &DatasetManifest, texture_config: &TextureConfig) -> Result<Self> {
        texture_config.validate()?;
        let mut samples = BTreeMap::new();
        for s in &manifest.samples {
            let image = load_image(manifest.resolve(&s.image_path))?;
            let face = match &s.face_mask_path {
                Some(p) => load_mask(manifest.resolve(p))?,
                None => fallback_face_mask(&image),
            };
            if face.height() != image.height() || face.width() != image.width() {
                bail!(Format, "{}: face mask size differs from image", s.image_id);
            }
            let texture = weak_label(&image, Some(&face), texture_config)?;
            let weak = match &s.weak_label_path {
                Some(p) => {
                    let img = load_image(manifest.resolve(p))?;
                    TextureMap::new(img.height(), img.width(), img.data().to_vec())?
                }
                None => texture.clone(),
            };
            let gt = match &s.fused_gt_path {
                Some(p) => Some(load_mask(manifest.resolve(p))?),
                None => None,
            };
            samples.insert(
                s.image_id.clone(),
                LoadedSample {
                    image_id: s.image_id.clone(),
                    image,
                    face,
                    texture,
                    weak_label: weak,
                    gt,
                },
            );
        }
        Ok(Self {
            texture_config: *texture_config,
            samples,
        })
    }

    pub fn from_samples(texture_config: TextureConfig, items: Vec<LoadedSample>) -> Self {
        Self {
            texture_config,
            samples: items.into_iter().map(|s| (s.image_id.clone(), s)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&LoadedSample> {
        self.samples
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("image id {id} not in dataset")))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&LoadedSample>> {
        ids.iter().map(|id| self.get(id)).collect()
    }

    /// Fails with the full list of ids whose fused ground truth is absent.
    pub fn require_gt(&self, ids: &[String]) -> Result<()> {
        let missing: Vec<&str> = ids
            .iter()
            .filter(|id| self.samples.get(*id).is_none_or(|s| s.gt.is_none()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            bail!(
                NotFound,
                "fused ground truth missing for: {} (expected <id>.gt.png; run `fuse` first)",
                missing.join(", ")
            );
        }
        Ok(())
    }
}

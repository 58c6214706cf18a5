//! The two training stages and the pretext baselines.
//!
//! Pretraining maps RGB to one sigmoid channel and minimizes MSE against the
//! texture weak label, or against the clean grayscale image for a pretext
//! task (whose input is the degraded grayscale, replicated to three
//! channels). Finetuning maps RGB plus the regenerated texture channel to
//! two logits and minimizes weighted softmax cross-entropy against the fused
//! ground truth. Both keep the checkpoint with the best validation score.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::imagecore::{add_gaussian_noise, down_up_sample, gaussian_blur, to_grayscale, Image};
use crate::nn::checkpoint::{checkpoint_bytes, checkpoint_id, CheckpointMeta};
use crate::nn::{adam_step, loss_mse, loss_softmax_ce, AdamConfig, OptimState, Tensor4};
use crate::pipeline::dataset::{subset_fraction, LoadedDataset, LoadedSample, Splits};
use crate::pipeline::evaluate::{evaluate, EvalOptions};
use crate::pipeline::metrics::{MetricsReport, Overlap};
use crate::pipeline::synth::item_seed;
use crate::unet::{build_unet, image_tensor, transfer_weights, wrinkles_from_logits, Stage, UNet, UNetConfig};

pub const DEBLUR_SIGMA: f64 = 2.0;
pub const DENOISE_SIGMA: f64 = 0.1;
pub const SUPER_RESOLUTION_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextKind {
    Reconstruction,
    Deblur,
    Denoise,
    SuperResolution,
}

impl PretextKind {
    pub const ALL: [PretextKind; 4] = [
        PretextKind::Reconstruction,
        PretextKind::Deblur,
        PretextKind::Denoise,
        PretextKind::SuperResolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PretextKind::Reconstruction => "reconstruction",
            PretextKind::Deblur => "deblur",
            PretextKind::Denoise => "denoise",
            PretextKind::SuperResolution => "super_resolution",
        }
    }

    /// Corrupts a clean image; `seed` only matters for denoising.
    pub fn degrade(self, clean: &Image, seed: u64) -> Result<Image> {
        match self {
            PretextKind::Reconstruction => Ok(clean.clone()),
            PretextKind::Deblur => gaussian_blur(clean, DEBLUR_SIGMA),
            PretextKind::Denoise => add_gaussian_noise(clean, DENOISE_SIGMA, seed),
            PretextKind::SuperResolution => down_up_sample(clean, SUPER_RESOLUTION_FACTOR),
        }
    }
}

impl FromStr for PretextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PretextKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown pretext kind {s:?}")))
    }
}

/// What a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TrainStage {
    /// Texture weak labels.
    Pretrain,
    Finetune,
    Pretext(PretextKind),
}

impl TrainStage {
    /// Name of the learned target, recorded in checkpoints.
    pub fn task(self) -> &'static str {
        match self {
            TrainStage::Pretrain => "texture",
            TrainStage::Finetune => "wrinkles",
            TrainStage::Pretext(k) => k.name(),
        }
    }
}

impl fmt::Display for TrainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainStage::Pretrain => f.write_str("pretrain"),
            TrainStage::Finetune => f.write_str("finetune"),
            TrainStage::Pretext(k) => write!(f, "pretext:{}", k.name()),
        }
    }
}

impl FromStr for TrainStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(TrainStage::Pretrain),
            "finetune" => Ok(TrainStage::Finetune),
            other => match other.strip_prefix("pretext:") {
                Some(k) => Ok(TrainStage::Pretext(k.parse()?)),
                None => bail!(
                    Argument,
                    "unknown stage {other:?} (pretrain, finetune, pretext:<kind>)"
                ),
            },
        }
    }
}

impl TryFrom<String> for TrainStage {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrainStage> for String {
    fn from(s: TrainStage) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: TrainStage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cross-entropy weight of wrinkle pixels (finetuning only).
    pub pos_weight: f64,
    /// Share of the training split used (finetuning only).
    pub fraction: f64,
    pub seed: u64,
    /// Kept for the record: training is single-threaded with a fixed
    /// summation order, so runs are reproducible either way.
    pub deterministic: bool,
    /// Architecture used when a fresh model is built.
    pub base_width: usize,
    pub depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            stage: TrainStage::Pretrain,
            epochs: 60,
            batch_size: 4,
            lr: 1e-3,
            pos_weight: 1.0,
            fraction: 1.0,
            seed: 0,
            deterministic: true,
            base_width: 16,
            depth: 3,
        }
    }

    pub fn finetune() -> Self {
        Self {
            stage: TrainStage::Finetune,
            epochs: 30,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Argument, "epochs must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Argument, "batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Argument, "learning rate must be positive, got {}", self.lr);
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            bail!(Argument, "pos_weight must be positive, got {}", self.pos_weight);
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            bail!(Argument, "fraction {} must lie in (0, 1]", self.fraction);
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn unet(&self, stage: Stage) -> UNetConfig {
        match stage {
            Stage::Pretrain => UNetConfig::pretrain(self.base_width, self.depth, self.seed),
            Stage::Finetune => UNetConfig::finetune(self.base_width, self.depth, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_jsi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from `best_epoch`.
    pub model: UNet<f32>,
    pub meta: CheckpointMeta,
    pub best_epoch: usize,
    /// Mean training loss of the initial weights, before any update.
    pub initial_train_loss: f64,
    pub curve: Vec<EpochLog>,
    pub train_ids: Vec<String>,
}

impl TrainOutcome {
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        checkpoint_bytes(&self.model, &self.meta)
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub train: TrainOutcome,
    pub test_report: MetricsReport,
}

enum Target {
    Dense(Tensor4<f32>),
    Labels(Vec<u8>),
}

struct Example {
    input: Tensor4<f32>,
    target: Target,
}

fn id_seed(seed: u64, id: &str) -> u64 {
    id.bytes().fold(item_seed(seed, 0), |h, b| item_seed(h, b as u64))
}

/// Model input and target for one pretraining sample.
pub fn pretrain_pair(sample: &LoadedSample, stage: TrainStage, seed: u64) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let (h, w) = (sample.image.height(), sample.image.width());
    match stage {
        TrainStage::Pretrain => Ok((
            image_tensor(&sample.image, None)?,
            Tensor4::from_vec([1, 1, h, w], sample.weak_label.data().iter().map(|&v| v as f32).collect())?,
        )),
        TrainStage::Pretext(kind) => {
            let clean = to_grayscale(&sample.image);
            let degraded = kind.degrade(&clean, id_seed(seed, &sample.image_id))?;
            Ok((
                image_tensor(&degraded, None)?,
                Tensor4::from_vec([1, 1, h, w], clean.data().iter().map(|&v| v as f32).collect())?,
            ))
        }
        TrainStage::Finetune => bail!(Argument, "finetune is not a pretraining stage"),
    }
}

fn finetune_example(sample: &LoadedSample) -> Result<Example> {
    let gt = sample
        .gt
        .as_ref()
        .ok_or_else(|| Error::NotFound(format!("fused ground truth for {}", sample.image_id)))?;
    Ok(Example {
        input: image_tensor(&sample.image, Some(&sample.texture))?,
        target: Target::Labels(gt.data().to_vec()),
    })
}

fn batch_loss(model: &mut UNet<f32>, batch: &[&Example], cfg: &TrainConfig, train: bool) -> Result<f64> {
    let inputs: Vec<&Tensor4<f32>> = batch.iter().map(|e| &e.input).collect();
    let x = Tensor4::stack(&inputs)?;
    let logits = if train { model.forward(&x)? } else { model.infer(&x)? };
    let (loss, grad) = match &batch[0].target {
        Target::Dense(_) => {
            let targets: Vec<&Tensor4<f32>> = batch
                .iter()
                .map(|e| match &e.target {
                    Target::Dense(t) => t,
                    Target::Labels(_) => unreachable!("batches are homogeneous"),
                })
                .collect();
            loss_mse(&logits, &Tensor4::stack(&targets)?)?
        }
        Target::Labels(_) => {
            let labels: Vec<u8> = batch
                .iter()
                .flat_map(|e| match &e.target {
                    Target::Labels(l) => l.iter().copied(),
                    Target::Dense(_) => unreachable!("batches are homogeneous"),
                })
                .collect();
            loss_softmax_ce(&logits, &labels, cfg.pos_weight)?
        }
    };
    if train {
        model.graph_mut().zero_grad();
        model.backward(&grad)?;
    }
    Ok(loss)
}

fn mean_loss(model: &mut UNet<f32>, items: &[Example], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for e in items {
        total += batch_loss(model, &[e], cfg, false)?;
    }
    Ok(total / items.len() as f64)
}

fn mean_jsi(model: &UNet<f32>, items: &[&LoadedSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in items {
        let logits = model.infer(&image_tensor(&s.image, Some(&s.texture))?)?;
        let (_, pred) = wrinkles_from_logits(&logits)?;
        total += Overlap::of(&pred, s.gt.as_ref().expect("gt checked"))?.jsi();
    }
    Ok(total / items.len() as f64)
}

/// Validation score; larger is better.
enum Validation<'a> {
    Loss(Vec<Example>),
    Jsi(Vec<&'a LoadedSample>),
}

fn fit(
    mut model: UNet<f32>,
    train: Vec<Example>,
    val: Validation<'_>,
    cfg: &TrainConfig,
) -> Result<(UNet<f32>, usize, f64, Vec<EpochLog>)> {
    let mut opt = OptimState::new(cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, 0x7261_696e));
    let initial = mean_loss(&mut model, &train, cfg)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, UNet<f32>)> = None;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            total += batch_loss(&mut model, &batch, cfg, true)? * batch.len() as f64;
            adam_step(&mut model.graph_mut().params_mut(), &mut opt)?;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            bail!(State, "training loss diverged at epoch {epoch}");
        }
        let mut log = EpochLog {
            epoch,
            train_loss,
            val_loss: None,
            val_jsi: None,
        };
        let score = match &val {
            Validation::Loss(items) if !items.is_empty() => {
                let l = mean_loss(&mut model, items, cfg)?;
                log.val_loss = Some(l);
                -l
            }
            Validation::Jsi(items) if !items.is_empty() => {
                let j = mean_jsi(&model, items)?;
                log.val_jsi = Some(j);
                j
            }
            _ => -train_loss,
        };
        log::debug!(
            "{} epoch {epoch}: train {train_loss:.5} val_loss {:?} val_jsi {:?}",
            cfg.stage,
            log.val_loss,
            log.val_jsi
        );
        curve.push(log);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok((best_model, best_epoch, initial, curve))
}

fn mean_target(items: &[Example]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in items {
        if let Target::Dense(t) = &e.target {
            sum += t.data().iter().map(|&v| v as f64).sum::<f64>();
            n += t.len();
        }
    }
    sum / n.max(1) as f64
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Trains a 3->1 model on texture weak labels or a pretext target. The head
/// bias is first set to the logit of the mean training target.
pub fn pretrain(model: UNet<f32>, data: &LoadedDataset, splits: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if matches!(cfg.stage, TrainStage::Finetune) {
        bail!(Argument, "pretrain needs stage pretrain or pretext:<kind>, got finetune");
    }
    if model.stage() != Stage::Pretrain {
        bail!(Usage, "pretrain needs a pretrain-stage 3->1 model, got a {} model", model.stage());
    }
    if splits.train.is_empty() {
        bail!(Argument, "training split is empty");
    }
    let examples = |ids: &[String]| -> Result<Vec<Example>> {
        data.select(ids)?
            .into_iter()
            .map(|s| {
                let (input, target) = pretrain_pair(s, cfg.stage, cfg.seed)?;
                Ok(Example {
                    input,
                    target: Target::Dense(target),
                })
            })
            .collect()
    };
    let train = examples(&splits.train)?;
    let val = Validation::Loss(examples(&splits.val)?);
    // From a zero bias, Adam's first steps push the sigmoid into saturation
    // on sparse texture targets and the body never receives gradient.
    let mut model = model;
    model.set_head_bias(logit(mean_target(&train)) as f32);
    let (model, best_epoch, initial_train_loss, curve) = fit(model, train, val, cfg)?;
    Ok(TrainOutcome {
        model,
        meta: CheckpointMeta {
            task: cfg.stage.task().into(),
            epoch: best_epoch,
            seed: cfg.seed,
        },
        best_epoch,
        initial_train_loss,
        curve,
        train_ids: splits.train.clone(),
    })
}

/// Trains a 4->2 wrinkle model and evaluates it on the test split.
///
/// A pretrain-stage `model` goes through weight transfer first; a
/// finetune-stage one continues training; `None` starts from He init.
pub fn finetune(
    model: Option<UNet<f32>>,
    data: &LoadedDataset,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if cfg.stage != TrainStage::Finetune {
        bail!(Argument, "finetune needs stage finetune, got {}", cfg.stage);
    }
    let target = cfg.unet(Stage::Finetune);
    let model = match model {
        None => build_unet::<f32>(&target)?,
        Some(m) if m.stage() == Stage::Pretrain => transfer_weights(
            &m,
            &UNetConfig {
                base_width: m.config().base_width,
                depth: m.config().depth,
                ..target
            },
        )?,
        Some(m) => m,
    };
    let train_ids = subset_fraction(&splits.train, cfg.fraction, cfg.seed)?;
    let mut needed = train_ids.clone();
    needed.extend(splits.val.iter().cloned());
    data.require_gt(&needed)?;
    log::info!(
        "finetuning on {} of {} training images",
        train_ids.len(),
        splits.train.len()
    );
    let train = data
        .select(&train_ids)?
        .into_iter()
        .map(finetune_example)
        .collect::<Result<Vec<_>>>()?;
    let val = Validation::Jsi(data.select(&splits.val)?);
    let (model, best_epoch, initial_train_loss, curve) = fit(model, train, val, cfg)?;
    let meta = CheckpointMeta {
        task: cfg.stage.task().into(),
        epoch: best_epoch,
        seed: cfg.seed,
    };
    let id = checkpoint_id(&checkpoint_bytes(&model, &meta)?);
    let test_report = evaluate(
        &model,
        data,
        &splits.test,
        &EvalOptions {
            config: serde_json::to_value(cfg)?,
            checkpoint_id: id,
            out_dir: None,
        },
    )?;
    Ok(FinetuneOutcome {
        train: TrainOutcome {
            model,
            meta,
            best_epoch,
            initial_train_loss,
            curve,
            train_ids,
        },
        test_report,
    })
}

/// Mean per-image JSI of `model` against the fused ground truth of `ids`.
pub fn split_jsi(model: &UNet<f32>, data: &LoadedDataset, ids: &[String]) -> Result<f64> {
    data.require_gt(ids)?;
    if ids.is_empty() {
        bail!(Argument, "no images to score");
    }
    mean_jsi(model, &data.select(ids)?)
}

//! Encoder-decoder segmentation network for both training stages, and the
//! weight transfer between them.
//!
//! With `b = base_width`, `d = depth` and `w_l = b * 2^l`, the layers are:
//!
//! | block              | layers                                             | parameters                               |
//! |--------------------|----------------------------------------------------|------------------------------------------|
//! | `enc{l}`, l < d    | conv3x3 `in_l -> w_l`, relu, conv3x3 `w_l -> w_l`, relu, maxpool2 | `9 in_l w_l + w_l + 9 w_l^2 + w_l` |
//! | `mid`              | conv3x3 `w_{d-1} -> w_d`, relu, conv3x3 `w_d -> w_d`, relu | `9 w_{d-1} w_d + w_d + 9 w_d^2 + w_d` |
//! | `dec{l}`, l = d-1..0 | upsample2, conv3x3 `w_{l+1} -> w_l`, relu, concat(skip `enc{l}`), conv3x3 `2 w_l -> w_l`, relu, conv3x3 `w_l -> w_l`, relu | `9 w_{l+1} w_l + 18 w_l^2 + 9 w_l^2 + 3 w_l` |
//! | `head`             | conv1x1 `w_0 -> out`                               | `w_0 out + out`                          |
//!
//! where `in_0` is the input channel count and `in_l = w_{l-1}`. There is no
//! normalisation layer; upsampling is nearest-neighbour followed by a conv.
//!
//! Going from the 3-in/1-out pretraining network to the 4-in/2-out finetuning
//! network adds `9 b` weights (one more input slice of the first conv) and
//! `w_0 + 1` parameters (one more head channel).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::imagecore::{BinaryMask, Image, TextureMap};
use crate::nn::graph::{ModelGraph, Op};
use crate::nn::layers::Conv2d;
use crate::nn::loss::sigmoid;
use crate::nn::{Scalar, Tensor4};

/// Wrinkle-class probability per pixel.
pub type ProbMap = TextureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::pretrain(16, 3, 0)
    }
}

impl UNetConfig {
    /// RGB in, one texture-logit channel out.
    pub fn pretrain(base_width: usize, depth: usize, seed: u64) -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            base_width,
            depth,
            seed,
        }
    }

    /// RGB plus texture in, background/wrinkle logits out.
    pub fn finetune(base_width: usize, depth: usize, seed: u64) -> Self {
        Self {
            in_channels: 4,
            out_channels: 2,
            base_width,
            depth,
            seed,
        }
    }

    /// Width/depth giving about 17M parameters, the size of a full-scale model; used
    /// for parameter bookkeeping only.
    pub fn full_scale() -> Self {
        Self::pretrain(44, 4, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 {
            bail!(
                Argument,
                "depth and base_width must be >= 1 (got depth {}, base {})",
                self.depth,
                self.base_width
            );
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            bail!(Argument, "channel counts must be >= 1");
        }
        if !self.is_pipeline_stage() {
            log::warn!(
                "U-Net with {} inputs / {} outputs is not one of the two pipeline stages",
                self.in_channels,
                self.out_channels
            );
        }
        Ok(())
    }

    pub fn is_pipeline_stage(&self) -> bool {
        matches!((self.in_channels, self.out_channels), (3, 1) | (4, 2))
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial dims must be multiples of this.
    pub fn granularity(&self) -> usize {
        1 << self.depth
    }

    pub fn stage(&self) -> Stage {
        if self.out_channels == 2 {
            Stage::Finetune
        } else {
            Stage::Pretrain
        }
    }
}

/// Parameter growth of [`transfer_weights`] from `from` to `to`.
pub fn transfer_param_delta(from: &UNetConfig, to: &UNetConfig) -> i64 {
    let extra_in = to.in_channels as i64 - from.in_channels as i64;
    let extra_out = to.out_channels as i64 - from.out_channels as i64;
    extra_in * 9 * from.base_width as i64 + extra_out * (from.base_width as i64 + 1)
}

#[derive(Debug, Clone)]
pub struct UNet<S> {
    config: UNetConfig,
    stage: Stage,
    graph: ModelGraph<S>,
    head_input: usize,
}

fn push_conv<S: Scalar>(g: &mut ModelGraph<S>, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut conv = Conv2d::new(name, cin, cout, k);
    conv.he_init(rng);
    g.push(name, Op::Conv(conv))
}

fn push_conv_relu<S: Scalar>(g: &mut ModelGraph<S>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> usize {
    push_conv(g, name, cin, cout, 3, rng);
    g.push(format!("{name}.relu"), Op::Relu)
}

pub fn build_unet<S: Scalar>(cfg: &UNetConfig) -> Result<UNet<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = ModelGraph::new();
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut cin = cfg.in_channels;
    for l in 0..cfg.depth {
        let w = cfg.width(l);
        push_conv_relu(&mut g, &format!("enc{l}.conv1"), cin, w, &mut rng);
        skips.push(push_conv_relu(&mut g, &format!("enc{l}.conv2"), w, w, &mut rng));
        g.push(format!("enc{l}.pool"), Op::MaxPool2);
        cin = w;
    }
    let wd = cfg.width(cfg.depth);
    push_conv_relu(&mut g, "mid.conv1", cin, wd, &mut rng);
    push_conv_relu(&mut g, "mid.conv2", wd, wd, &mut rng);
    for l in (0..cfg.depth).rev() {
        let (wl, wup) = (cfg.width(l), cfg.width(l + 1));
        g.push(format!("dec{l}.up"), Op::Upsample2);
        push_conv_relu(&mut g, &format!("dec{l}.upconv"), wup, wl, &mut rng);
        g.push(format!("dec{l}.cat"), Op::Concat { skip: skips[l] });
        push_conv_relu(&mut g, &format!("dec{l}.conv1"), 2 * wl, wl, &mut rng);
        push_conv_relu(&mut g, &format!("dec{l}.conv2"), wl, wl, &mut rng);
    }
    let head_input = g.nodes().len();
    push_conv(&mut g, "head", cfg.width(0), cfg.out_channels, 1, &mut rng);
    Ok(UNet {
        config: *cfg,
        stage: cfg.stage(),
        graph: g,
        head_input,
    })
}

impl<S: Scalar> UNet<S> {
    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn graph(&self) -> &ModelGraph<S> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut ModelGraph<S> {
        &mut self.graph
    }

    pub fn count_params(&self) -> usize {
        self.graph.count_params()
    }

    /// Sets every output-channel bias of the final 1x1 conv.
    pub fn set_head_bias(&mut self, value: S) {
        let head = self.graph.convs_mut().last().expect("a U-Net has a head");
        head.bias.value.iter_mut().for_each(|b| *b = value);
    }

    fn check_input(&self, x: &Tensor4<S>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let g = self.config.granularity();
        if c != self.config.in_channels {
            bail!(
                Shape,
                "model expects {} input channels, got input {:?}",
                self.config.in_channels,
                x.shape()
            );
        }
        if h == 0 || w == 0 || h % g != 0 || w % g != 0 {
            bail!(
                Shape,
                "input {:?}: spatial dims must be non-zero multiples of {g} for depth {}",
                x.shape(),
                self.config.depth
            );
        }
        Ok(())
    }

    /// Training forward pass (activations retained for backward).
    pub fn forward(&mut self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_input(x)?;
        self.graph.forward(x)
    }

    pub fn backward(&mut self, loss_grad: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.graph.backward(loss_grad)
    }

    /// Inference pass; leaves the model untouched.
    pub fn infer(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_input(x)?;
        self.graph.infer(x)
    }

    /// Decoder output feeding the 1x1 head.
    pub fn features(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_input(x)?;
        let mut acts = self.graph.activations(x)?;
        Ok(acts.swap_remove(self.head_input))
    }

    pub(crate) fn set_stage(&mut self, stage: Stage) {
        self.stage = stage;
    }

    pub fn cast<T: Scalar>(&self) -> UNet<T> {
        let mut out = build_unet::<T>(&self.config).expect("config already validated");
        for (dst, src) in out.graph.params_mut().into_iter().zip(self.graph.params()) {
            for (d, s) in dst.value.iter_mut().zip(&src.value) {
                *d = T::of(s.as_f64());
            }
        }
        out.stage = self.stage;
        out
    }
}

/// Builds the finetuning network from a pretrained one.
///
/// Every parameter except the first conv and the head is copied bit for bit.
/// The first conv keeps its pretrained input slices and gets zero weights for
/// the added input channels, so the handoff ignores the new inputs until
/// finetuning moves those weights. The head is freshly initialised.
pub fn transfer_weights<S: Scalar>(pretrained: &UNet<S>, target_cfg: &UNetConfig) -> Result<UNet<S>> {
    let src = pretrained.config;
    if src.base_width != target_cfg.base_width || src.depth != target_cfg.depth {
        bail!(
            Incompatible,
            "pretrained {src:?} and target {target_cfg:?} differ in base_width/depth"
        );
    }
    if target_cfg.in_channels < src.in_channels {
        bail!(
            Incompatible,
            "target has fewer inputs ({}) than the pretrained model ({})",
            target_cfg.in_channels,
            src.in_channels
        );
    }
    let mut out = build_unet::<S>(target_cfg)?;
    let first = "enc0.conv1";
    for (dst, from) in out.graph.convs_mut().zip(pretrained.graph.convs()) {
        let name = dst.weight.name.trim_end_matches(".weight").to_string();
        if name == "head" {
            continue;
        }
        if name == first {
            let k2 = dst.kernel * dst.kernel;
            let (cin_new, cin_old) = (dst.in_channels, from.in_channels);
            for o in 0..dst.out_channels {
                for c in 0..cin_new {
                    let d = &mut dst.weight.value[(o * cin_new + c) * k2..][..k2];
                    if c < cin_old {
                        d.copy_from_slice(&from.weight.value[(o * cin_old + c) * k2..][..k2]);
                    } else {
                        d.iter_mut().for_each(|v| *v = S::zero());
                    }
                }
            }
            dst.bias.value.copy_from_slice(&from.bias.value);
        } else {
            dst.weight.value.copy_from_slice(&from.weight.value);
            dst.bias.value.copy_from_slice(&from.bias.value);
        }
    }
    out.stage = Stage::Finetune;
    Ok(out)
}

/// Channels-first `[1, C, H, W]` tensor of an image, optionally followed by a texture channel.
pub fn image_tensor<S: Scalar>(img: &Image, texture: Option<&TextureMap>) -> Result<Tensor4<S>> {
    let (h, w) = (img.height(), img.width());
    let rgb: Vec<Image> = if img.channels() == 3 {
        (0..3).map(|c| img.channel(c)).collect()
    } else {
        vec![img.clone(), img.clone(), img.clone()]
    };
    let mut data: Vec<S> = Vec::with_capacity(h * w * 4);
    for plane in &rgb {
        data.extend(plane.data().iter().map(|&v| S::of(v)));
    }
    let mut channels = 3;
    if let Some(t) = texture {
        if t.height() != h || t.width() != w {
            bail!(
                Argument,
                "texture {}x{} does not match image {h}x{w}",
                t.height(),
                t.width()
            );
        }
        data.extend(t.data().iter().map(|&v| S::of(v)));
        channels = 4;
    }
    Tensor4::from_vec([1, channels, h, w], data)
}

/// Sigmoid of a single-channel logit map (batch item 0).
pub fn texture_from_logits<S: Scalar>(logits: &Tensor4<S>) -> Result<TextureMap> {
    let [_, c, h, w] = logits.shape();
    if c != 1 {
        bail!(Shape, "texture head must have 1 channel, got {:?}", logits.shape());
    }
    let data = logits.item(0).iter().map(|v| sigmoid(v.as_f64())).collect();
    TextureMap::new(h, w, data)
}

/// Wrinkle probability and decision from `[background, wrinkle]` logits (batch item 0).
///
/// Equal logits decide for wrinkle.
pub fn wrinkles_from_logits<S: Scalar>(logits: &Tensor4<S>) -> Result<(ProbMap, BinaryMask)> {
    let [_, c, h, w] = logits.shape();
    if c != 2 {
        bail!(Shape, "wrinkle head must have 2 channels, got {:?}", logits.shape());
    }
    let item = logits.item(0);
    let (bg, wr) = item.split_at(h * w);
    let mut prob = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for (b, r) in bg.iter().zip(wr) {
        let (b, r) = (b.as_f64(), r.as_f64());
        prob.push(sigmoid(r - b));
        mask.push(u8::from(r >= b));
    }
    Ok((TextureMap::new(h, w, prob)?, BinaryMask::new(h, w, mask)?))
}

pub fn predict_texture<S: Scalar>(model: &UNet<S>, img: &Image) -> Result<TextureMap> {
    let cfg = model.config();
    if model.stage() != Stage::Pretrain || cfg.out_channels != 1 || cfg.in_channels != 3 {
        bail!(
            Usage,
            "texture prediction needs a 3->1 pretrain-stage model, got {} model {}->{}",
            model.stage(),
            cfg.in_channels,
            cfg.out_channels
        );
    }
    texture_from_logits(&model.infer(&image_tensor(img, None)?)?)
}

pub fn predict_wrinkles<S: Scalar>(
    model: &UNet<S>,
    img: &Image,
    texture: &TextureMap,
) -> Result<(ProbMap, BinaryMask)> {
    let cfg = model.config();
    if model.stage() != Stage::Finetune || cfg.out_channels != 2 || cfg.in_channels != 4 {
        bail!(
            Usage,
            "wrinkle prediction needs a 4->2 finetune-stage model, got {} model {}->{}",
            model.stage(),
            cfg.in_channels,
            cfg.out_channels
        );
    }
    wrinkles_from_logits(&model.infer(&image_tensor(img, Some(texture))?)?)
}

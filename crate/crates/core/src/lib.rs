//! Facial wrinkle segmentation on the CPU.
//!
//! The pipeline has two training stages sharing one U-Net body:
//!
//! 1. **Pretraining** on weak labels: texture maps computed from each face
//!    image ([`weaklabel`]) are regressed from RGB (3 in, 1 out).
//! 2. **Finetuning** on human labels: several annotators' masks are fused by
//!    majority vote ([`fusion`]) and the network, with its input widened to
//!    RGB + texture and its head widened to background/wrinkle logits
//!    ([`unet::transfer_weights`]), is trained with softmax cross-entropy.
//!
//! Predictions are scored with the Jaccard similarity index
//! ([`pipeline::metrics`]). [`pipeline`] also provides a synthetic face
//! generator with simulated annotators, self-supervised pretext baselines,
//! and the data-fraction ablation runner. Everything numeric (filters,
//! autodiff, convolution, optimizer) lives in this crate.

pub mod cli;
pub mod error;
pub mod fusion;
pub mod imagecore;
pub mod nn;
pub mod pipeline;
pub mod unet;
pub mod weaklabel;

pub use error::{Error, Result};
pub use imagecore::{BinaryMask, Image, TextureMap};
pub use pipeline::metrics::jsi;

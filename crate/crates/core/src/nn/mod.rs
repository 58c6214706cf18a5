//! Dense tensors, the layer graph with its reverse-mode pass, losses, Adam,
//! checkpoint files, and the finite-difference checks that guard all of it.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CheckpointMeta};
pub use graph::{ModelGraph, Op};
pub use layers::{conv_forward, Conv2d, Param};
pub use loss::{loss_mse, loss_softmax_ce, sigmoid};
pub use scalar::Scalar;
pub use tensor::Tensor4;

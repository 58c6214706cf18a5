//! Dataset handling, synthetic data, training stages, evaluation, and the
//! ablation grid.

pub mod ablation;
pub mod dataset;
pub mod evaluate;
pub mod metrics;
pub mod prepare;
pub mod synth;
pub mod train;

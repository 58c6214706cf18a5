//! Finetunes the desk-scale network on four synthetic faces until it memorizes them.
//!
//! cargo run --release --example overfit_unet -- 150

use wseg::pipeline::dataset::{LoadedDataset, Splits};
use wseg::pipeline::prepare::fuse_manifest;
use wseg::pipeline::synth::{synth_dataset, SynthConfig};
use wseg::pipeline::train::{finetune, split_jsi, TrainConfig};

fn main() -> wseg::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let dir = std::env::temp_dir().join("wseg_overfit_example");
    let manifest = synth_dataset(&SynthConfig { count: 4, seed: 11, ..SynthConfig::default() }, &dir)?;
    let (manifest, _) = fuse_manifest(&manifest, 2)?;
    let data = LoadedDataset::load(&manifest, &Default::default())?;
    let ids = manifest.ids();
    let splits = Splits { train: ids.clone(), val: ids.clone(), test: ids.clone(), ratios: [1.0, 0.0, 0.0], seed: 0 };

    let cfg = TrainConfig { epochs, batch_size: 1, ..TrainConfig::finetune() };
    let out = finetune(None, &data, &splits, &cfg)?;
    for log in out.train.curve.iter().filter(|l| l.epoch % 10 == 0) {
        println!("epoch {:4}  loss {:.5}  train JSI {:.4}", log.epoch, log.train_loss, log.val_jsi.unwrap_or(f64::NAN));
    }
    println!("best epoch {}: train JSI {:.4}", out.train.best_epoch, split_jsi(&out.train.model, &data, &ids)?);
    Ok(())
}

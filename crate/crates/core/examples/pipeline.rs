//! End to end at toy scale: synthesize, label, fuse, pretrain, transfer,
//! finetune, evaluate. Artifacts land in the given directory.
//!
//! cargo run --release --example pipeline -- /tmp/wseg_run

use std::path::PathBuf;

use wseg::nn::checkpoint::save_checkpoint;
use wseg::pipeline::dataset::{split_dataset, LoadedDataset, DEFAULT_RATIOS};
use wseg::pipeline::evaluate::{evaluate, EvalOptions};
use wseg::pipeline::prepare::{fuse_manifest, weaklabel_manifest};
use wseg::pipeline::synth::{synth_dataset, SynthConfig};
use wseg::pipeline::train::{finetune, pretrain, TrainConfig};
use wseg::unet::{build_unet, Stage};

fn main() -> wseg::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline_out".into()));
    let seed = 3;
    let texture = Default::default();

    let manifest = synth_dataset(&SynthConfig { count: 20, size: 32, seed, ..SynthConfig::default() }, out.join("data"))?;
    let manifest = weaklabel_manifest(&manifest, &texture)?;
    let (manifest, agreement) = fuse_manifest(&manifest, 2)?;
    println!("annotator agreement {:.3}", agreement.mean_pairwise_jsi.unwrap_or(f64::NAN));

    let splits = split_dataset(&manifest, DEFAULT_RATIOS, seed)?;
    splits.save(out.join("splits.json"))?;
    let data = LoadedDataset::load(&manifest, &texture)?;

    let pcfg = TrainConfig { epochs: 8, base_width: 8, seed, ..TrainConfig::pretrain() };
    let pre = pretrain(build_unet(&pcfg.unet(Stage::Pretrain))?, &data, &splits, &pcfg)?;
    save_checkpoint(&pre.model, &pre.meta, out.join("pretrain.wseg"))?;
    println!("pretrain loss {:.4} -> {:.4}", pre.initial_train_loss, pre.curve.last().unwrap().train_loss);

    let fcfg = TrainConfig { epochs: 8, base_width: 8, pos_weight: 3.0, seed, ..TrainConfig::finetune() };
    let fin = finetune(Some(pre.model), &data, &splits, &fcfg)?;
    save_checkpoint(&fin.train.model, &fin.train.meta, out.join("finetune.wseg"))?;

    let report = evaluate(
        &fin.train.model,
        &data,
        &splits.test,
        &EvalOptions { out_dir: Some(out.join("eval")), ..fin_opts(&fcfg) },
    )?;
    println!("test mean JSI {:.4}, pooled {:.4}; overlays in {}", report.mean_jsi, report.pooled_jsi, out.join("eval/overlays").display());
    Ok(())
}

fn fin_opts(cfg: &TrainConfig) -> EvalOptions {
    EvalOptions { config: serde_json::to_value(cfg).expect("serializable"), ..EvalOptions::default() }
}

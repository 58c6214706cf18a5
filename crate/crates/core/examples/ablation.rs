//! A miniature method x label-fraction grid, written as CSV/JSON and printed.
//!
//! cargo run --release --example ablation -- /tmp/wseg_ablation

use std::path::PathBuf;

use wseg::pipeline::ablation::{render_table, run_ablation, AblationConfig};
use wseg::pipeline::dataset::{split_dataset, LoadedDataset, DEFAULT_RATIOS};
use wseg::pipeline::prepare::fuse_manifest;
use wseg::pipeline::synth::{synth_dataset, SynthConfig};
use wseg::pipeline::train::TrainConfig;

fn main() -> wseg::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ablation_out".into()));
    let manifest = synth_dataset(&SynthConfig { count: 30, size: 32, seed: 5, ..SynthConfig::default() }, out.join("data"))?;
    let (manifest, _) = fuse_manifest(&manifest, 2)?;
    let splits = split_dataset(&manifest, DEFAULT_RATIOS, 5)?;
    let data = LoadedDataset::load(&manifest, &Default::default())?;

    let cfg = AblationConfig {
        fractions: vec![1.0, 0.25],
        seeds: vec![0, 1],
        pretrain: TrainConfig { epochs: 4, base_width: 4, depth: 2, ..TrainConfig::pretrain() },
        finetune: TrainConfig { epochs: 4, base_width: 4, depth: 2, ..TrainConfig::finetune() },
        ..AblationConfig::default()
    };
    let table = run_ablation(&cfg, &data, &splits, Some(&out))?;
    print!("{}", render_table(&table.to_csv())?);
    println!("rows in {}", out.join("ablation.csv").display());
    Ok(())
}

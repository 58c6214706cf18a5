//! Widens a pretrained 3->1 network into a 4->2 one and shows what changed.
//!
//! cargo run --release --example transfer_surgery

use wseg::nn::checkpoint::{checkpoint_bytes, checkpoint_from_bytes, CheckpointMeta};
use wseg::nn::Tensor4;
use wseg::unet::{build_unet, transfer_param_delta, transfer_weights, UNetConfig};

fn main() -> wseg::Result<()> {
    let pre_cfg = UNetConfig::pretrain(16, 3, 1);
    let fin_cfg = UNetConfig::finetune(16, 3, 2);
    let pre = build_unet::<f32>(&pre_cfg)?;
    let fin = transfer_weights(&pre, &fin_cfg)?;

    println!("pretrain params {}", pre.count_params());
    println!("finetune params {}", fin.count_params());
    println!("closed-form delta {}", transfer_param_delta(&pre_cfg, &fin_cfg));
    let large = UNetConfig::full_scale();
    println!(
        "at base {} depth {}: delta {}",
        large.base_width,
        large.depth,
        transfer_param_delta(&large, &UNetConfig { in_channels: 4, out_channels: 2, ..large })
    );

    let copied = pre
        .graph()
        .params()
        .iter()
        .zip(fin.graph().params())
        .filter(|(a, b)| a.shape == b.shape && a.value == b.value)
        .count();
    println!("{copied} of {} tensors copied bit for bit", pre.graph().params().len());

    // logits do not depend on the new texture channel until training moves its weights
    let mut x = Tensor4::<f32>::from_fn([1, 4, 32, 32], |[_, c, y, x]| ((c * 7 + y * 3 + x) % 13) as f32 / 13.0);
    let a = fin.infer(&x)?;
    for (i, v) in x.item_mut(0)[3 * 32 * 32..].iter_mut().enumerate() {
        *v = (i % 5) as f32 / 4.0;
    }
    let b = fin.infer(&x)?;
    let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
    println!("max logit change when the texture channel changes: {diff:e}");

    let meta = CheckpointMeta { task: "wrinkles".into(), epoch: 0, seed: 2 };
    let bytes = checkpoint_bytes(&fin, &meta)?;
    let (back, header) = checkpoint_from_bytes(&bytes)?;
    println!(
        "checkpoint {} bytes, stage {}, round trip identical: {}",
        bytes.len(),
        header.stage,
        checkpoint_bytes(&back, &meta)? == bytes
    );
    Ok(())
}

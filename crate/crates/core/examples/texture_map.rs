//! Texture weak label of a synthetic face, saved next to the image.
//!
//! cargo run --release --example texture_map -- /tmp/texture

use wseg::imagecore::save_image;
use wseg::pipeline::synth::{synth_sample, SynthConfig};
use wseg::weaklabel::{binarize_texture, extract_texture, weak_label, TextureConfig};

fn main() -> wseg::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "texture_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| wseg::Error::Io { path: out.clone(), source: e })?;
    let face = synth_sample(&SynthConfig::default(), 3)?;
    let cfg = TextureConfig::default();

    let raw = extract_texture(&face.image, &cfg)?;
    let masked = weak_label(&face.image, Some(&face.face), &cfg)?;
    let binary = binarize_texture(&masked, 0.5)?;

    save_image(&face.image, out.join("face.png"))?;
    save_image(&raw, out.join("texture_raw.png"))?;
    save_image(&masked, out.join("texture_masked.png"))?;
    save_image(&binary, out.join("texture_binary.png"))?;

    let on_truth: Vec<f64> = masked
        .data()
        .iter()
        .zip(face.truth.data())
        .filter(|(_, t)| **t == 1)
        .map(|(v, _)| *v)
        .collect();
    println!("mean texture: whole map {:.4}, on wrinkles {:.4}", masked.mean(), on_truth.iter().sum::<f64>() / on_truth.len() as f64);
    println!("binary mask at 0.5 covers {} px; true wrinkles cover {}", binary.count(), face.truth.count());
    println!("wrote {}", out.display());
    Ok(())
}

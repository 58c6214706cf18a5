//! Fuses a simulated three-annotator panel with k-of-n voting.
//!
//! cargo run --release --example majority_vote

use wseg::fusion::{majority_vote, pairwise_agreement, AnnotationSet};
use wseg::jsi;
use wseg::pipeline::synth::{synth_sample, SynthConfig};

fn main() -> wseg::Result<()> {
    let s = synth_sample(&SynthConfig::default(), 0)?;
    let panel = AnnotationSet::new(s.image_id.clone(), s.annotators.clone())?;

    let report = pairwise_agreement(&panel)?;
    println!("pairwise annotator JSI:");
    for row in &report.pairwise_jsi {
        println!("  {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("  "));
    }

    for k in 1..=panel.len() {
        let fused = majority_vote(&panel, k)?;
        println!(
            "k={k}: {:4} px, JSI vs noise-free strokes {:.3}",
            fused.count(),
            jsi(&fused, &s.truth)?
        );
    }
    Ok(())
}

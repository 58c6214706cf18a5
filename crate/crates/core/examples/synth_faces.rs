//! Generates a small synthetic face dataset and prints annotator agreement.
//!
//! cargo run --release --example synth_faces -- /tmp/faces

use wseg::fusion::{pairwise_agreement, AnnotationSet};
use wseg::pipeline::synth::{synth_dataset, synth_sample, SynthConfig};

fn main() -> wseg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_faces_out".into());
    let cfg = SynthConfig {
        count: 8,
        seed: 7,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(&cfg, &out)?;
    println!("{} faces in {out}/samples, manifest {out}/manifest.json", manifest.samples.len());

    for i in 0..cfg.count {
        let s = synth_sample(&cfg, i)?;
        let agreement = pairwise_agreement(&AnnotationSet::new(s.image_id.clone(), s.annotators)?)?;
        println!(
            "{}: {} strokes, {} wrinkle px, annotator JSI {:.3}",
            s.image_id,
            s.strokes.len(),
            s.truth.count(),
            agreement.mean_offdiag
        );
    }
    Ok(())
}

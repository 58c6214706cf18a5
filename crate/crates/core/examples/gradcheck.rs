//! Finite-difference check of every layer, loss, and both U-Nets.
//!
//! cargo run --release --example gradcheck -- 3

use wseg::nn::gradcheck::{run_suite, TOLERANCE};

fn main() -> wseg::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let reports = run_suite(0, seeds)?;
    for r in &reports {
        println!(
            "{:<20} seed {} input {:?}: max rel err {:.2e} over {} entries ({} kinks skipped) {}",
            r.name,
            r.seed,
            r.input_shape,
            r.max_rel_err,
            r.entries_checked,
            r.kinks_skipped,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{failed} of {} checks above {TOLERANCE:e}", reports.len());
    Ok(())
}

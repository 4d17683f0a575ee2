//! Train every loss-term variant from one seed and print the ZSD/GZSD
//! table: baseline, +IntraSD, +InterSP over synthesized features only,
//! and +InterSP over the full hybrid pool.
//!
//! Run with: cargo run --example ablation_table [seed]

use regionsynth::data::{generate_benchmark, BenchmarkConfig};
use regionsynth::pipeline::{run_ablation, AblationVariant, TrainConfig};

fn main() -> regionsynth::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let bench = generate_benchmark(&BenchmarkConfig { seed, ..Default::default() }, seed)?;
    let cfg = TrainConfig { seed, ..Default::default() };

    let rows = run_ablation(&bench, &cfg, &AblationVariant::ALL)?;
    println!("{:<10} {:>6} {:>7} {:>7} {:>7}", "variant", "ZSD", "S", "U", "HM");
    for r in &rows {
        println!(
            "{:<10} {:>6.1} {:>7.1} {:>7.1} {:>7.1}",
            r.variant.to_string(),
            r.zsd.zsd_accuracy,
            r.gzsd.seen_mean,
            r.gzsd.unseen_mean,
            r.gzsd.harmonic_mean
        );
    }
    Ok(())
}

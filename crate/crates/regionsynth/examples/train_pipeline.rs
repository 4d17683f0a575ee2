//! Full pipeline on the default synthetic benchmark: pretrain the seen
//! classifier, train the synthesizer, synthesize unseen features, train
//! and merge the unseen classifier, then evaluate ZSD and GZSD.
//!
//! Run with: cargo run --example train_pipeline [seed]

use regionsynth::data::{generate_benchmark, ridge_transfer_cosines, BenchmarkConfig};
use regionsynth::pipeline::{evaluate, run_pipeline, EvalMode, TrainConfig};

fn main() -> regionsynth::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);

    let bench_cfg = BenchmarkConfig { seed, ..Default::default() };
    let bench = generate_benchmark(&bench_cfg, seed)?;
    println!(
        "benchmark: {} seen / {} unseen classes, d_f={}, d_w={}",
        bench.seen.len(),
        bench.unseen.len(),
        bench.d_f(),
        bench.d_w()
    );
    for (id, cos) in ridge_transfer_cosines(&bench, 1e-3)? {
        println!("  ridge transfer cosine for unseen class {id}: {cos:.4}");
    }

    let cfg = TrainConfig { seed, ..Default::default() };
    let start = std::time::Instant::now();
    let out = run_pipeline(&bench, &cfg)?;
    println!("pipeline finished in {:.1?}", start.elapsed());
    if let Some(last) = out.log.epochs.last() {
        println!(
            "last epoch: critic={:.4} adv={:.4} cs={:.4} sd={:.4} sp={:.4}",
            last.critic_loss, last.adv, last.l_cs, last.l_sd, last.l_sp
        );
    }

    let zsd = evaluate(&out.merged, &bench, EvalMode::Zsd)?;
    let gzsd = evaluate(&out.merged, &bench, EvalMode::Gzsd)?;
    print!("{}", zsd.summary());
    print!("{}", gzsd.summary());
    Ok(())
}

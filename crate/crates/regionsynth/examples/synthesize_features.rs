//! Train a synthesizer briefly, then synthesize labeled region features
//! for classes never seen in training and save them to a feature file.
//!
//! Run with: cargo run --example synthesize_features

use regionsynth::data::{generate_benchmark, save_features, BenchmarkConfig};
use regionsynth::pipeline::{pretrain_seen_classifier, synthesize_unseen, train_synthesizer, TrainConfig};
use regionsynth::Tensor;

fn main() -> regionsynth::Result<()> {
    let bench_cfg = BenchmarkConfig::default();
    let bench = generate_benchmark(&bench_cfg, 0)?;
    let cfg = TrainConfig { epochs: 20, ..Default::default() };

    let seen_clf = pretrain_seen_classifier(&bench, &cfg)?;
    let (generator, _critic, log) = train_synthesizer(&bench, &cfg, &seen_clf)?;
    println!("trained {} epochs", log.epochs.len());

    let semantics: Vec<(u32, Tensor)> = bench
        .unseen
        .iter()
        .map(|s| (s.id, s.semantic.clone()))
        .collect();
    let batch = synthesize_unseen(&generator, &semantics, &bench.unseen_ids(), 300, 7)?;
    println!(
        "synthesized {} features ({} per unseen class), all non-negative: {}",
        batch.len(),
        300,
        batch.features.data().iter().all(|&x| x >= 0.0)
    );

    let path = std::path::Path::new("target/synthesized.feat");
    save_features(&batch, path)?;
    println!("saved to {}", path.display());
    Ok(())
}

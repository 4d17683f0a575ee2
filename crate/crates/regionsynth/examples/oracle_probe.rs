//! Diagnostic: train the unseen head on REAL unseen test features (oracle
//! upper bound) to separate synthesis quality from protocol calibration.

use regionsynth::data::{generate_benchmark, BenchmarkConfig, FeatureBatch};
use regionsynth::pipeline::{
    evaluate, merge_classifiers, pretrain_seen_classifier, train_unseen_classifier, EvalMode,
    TrainConfig,
};

fn main() -> regionsynth::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let clf_epochs = get(1, 300.0) as usize;
    let clf_lr = get(2, 0.05);

    let bench_cfg = BenchmarkConfig { cov_scale: 0.15, ..Default::default() };
    let bench = generate_benchmark(&bench_cfg, 0)?;
    let mut cfg = TrainConfig::default();
    cfg.classifier_epochs = clf_epochs;
    cfg.classifier_lr = clf_lr;

    let seen = pretrain_seen_classifier(&bench, &cfg)?;
    // oracle: real unseen features as "synthesized" training data
    let oracle_batch = FeatureBatch::new(
        bench.test_unseen.features.clone(),
        bench.test_unseen.labels.clone(),
    )?;
    let unseen = train_unseen_classifier(&oracle_batch, &bench.unseen_ids(), &cfg)?;
    println!(
        "weight norms: seen {:.3} unseen {:.3}",
        seen.weight.l2_norm(),
        unseen.weight.l2_norm()
    );
    let merged = merge_classifiers(&seen, &unseen)?;
    let zsd = evaluate(&merged, &bench, EvalMode::Zsd)?;
    let gzsd = evaluate(&merged, &bench, EvalMode::Gzsd)?;
    println!(
        "ORACLE epochs={clf_epochs} lr={clf_lr}: ZSD={:.1} | S={:.1} U={:.1} HM={:.1}",
        zsd.zsd_accuracy, gzsd.seen_mean, gzsd.unseen_mean, gzsd.harmonic_mean
    );
    Ok(())
}

//! Scratch probe for hyperparameter exploration (not part of the API).
//! args: seed cov_scale lr lambda1 epochs hidden batch

use regionsynth::data::{generate_benchmark, BenchmarkConfig};
use regionsynth::models::Label;
use regionsynth::pipeline::{
    evaluate, pretrain_seen_classifier, run_pipeline, EvalMode, TrainConfig,
};

fn main() -> regionsynth::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = get(1, 0.0) as u64;
    let cov = get(2, 0.3);
    let lr = get(3, 1e-4);
    let l1 = get(4, 0.1);
    let l2 = get(8, 0.001);
    let l3 = get(9, 0.001);
    let epochs = get(5, 30.0) as usize;
    let hidden = get(6, 256.0) as usize;
    let batch = get(7, 64.0) as usize;

    let bench_cfg = BenchmarkConfig { cov_scale: cov, seed, ..Default::default() };
    let bench = generate_benchmark(&bench_cfg, seed)?;

    let mut cfg = TrainConfig { seed, epochs, hidden, batch_size: batch, ..Default::default() };
    cfg.learning_rate = lr;
    cfg.weights.cls = l1;
    cfg.weights.intra_sd = l2;
    cfg.weights.inter_sp = l3;

    // seen classifier quality alone
    let clf = pretrain_seen_classifier(&bench, &cfg)?;
    let logits = clf.forward(&bench.test_seen.features)?;
    let mut correct = 0;
    for i in 0..bench.test_seen.len() {
        let pred = logits
            .row(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if clf.classes[pred] == bench.test_seen.labels[i] {
            correct += 1;
        }
    }
    println!(
        "seen classifier test acc: {:.1}%",
        100.0 * correct as f64 / bench.test_seen.len() as f64
    );

    let start = std::time::Instant::now();
    let out = run_pipeline(&bench, &cfg)?;
    let dt = start.elapsed();
    if let Some(last) = out.log.epochs.last() {
        println!(
            "last epoch: critic={:.3} adv={:.3} cs={:.3} sd={:.3} sp={:.3}",
            last.critic_loss, last.adv, last.l_cs, last.l_sd, last.l_sp
        );
    }
    // where do synthesized features land vs real class means?
    for spec in &bench.unseen {
        let rows = out.synthesized.rows_of(Label::Class(spec.id));
        let d = bench.d_f();
        let mut mean = vec![0.0; d];
        for &r in &rows {
            for j in 0..d {
                mean[j] += out.synthesized.features.row(r)[j];
            }
        }
        for m in &mut mean {
            *m /= rows.len() as f64;
        }
        let cos = {
            let dot: f64 = mean.iter().zip(spec.feature_mean.data()).map(|(a, b)| a * b).sum();
            let na = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = spec.feature_mean.l2_norm();
            dot / (na * nb + 1e-12)
        };
        let norm_ratio = mean.iter().map(|x| x * x).sum::<f64>().sqrt() / spec.feature_mean.l2_norm();
        // per-coordinate std of synthesized features vs the real cov_scale
        let mut var = 0.0;
        for &r in &rows {
            for j in 0..d {
                let dlt = out.synthesized.features.row(r)[j] - mean[j];
                var += dlt * dlt;
            }
        }
        let std = (var / (rows.len() * d) as f64).sqrt();
        println!(
            "  class {}: synth-mean cos {:.3}, norm ratio {:.3}, synth std {:.3} (real {:.3})",
            spec.id, cos, norm_ratio, std, spec.cov_scale
        );
    }
    let zsd = evaluate(&out.merged, &bench, EvalMode::Zsd)?;
    let gzsd = evaluate(&out.merged, &bench, EvalMode::Gzsd)?;
    println!(
        "[{dt:.1?}] ZSD={:.1} | S={:.1} U={:.1} HM={:.1}",
        zsd.zsd_accuracy, gzsd.seen_mean, gzsd.unseen_mean, gzsd.harmonic_mean
    );
    Ok(())
}

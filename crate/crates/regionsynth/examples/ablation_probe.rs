//! Scratch probe: variant ordering across seeds (not part of the API).
//! args: epochs lr l1 l2 l3 d_z clf_epochs seed...

use regionsynth::data::{generate_benchmark, BenchmarkConfig};
use regionsynth::pipeline::{run_ablation, AblationVariant, TrainConfig};

fn main() -> regionsynth::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let epochs = get(1, 50.0) as usize;
    let lr = get(2, 1e-3);
    let l1 = get(3, 0.1);
    let l2 = get(4, 0.001);
    let l3 = get(5, 0.001);
    let d_z = get(6, 16.0) as usize;
    let clf_epochs = get(7, 300.0) as usize;
    let seeds: Vec<u64> = if args.len() > 8 {
        args[8..].iter().map(|s| s.parse().unwrap()).collect()
    } else {
        vec![0, 1]
    };

    let handles: Vec<_> = seeds
        .iter()
        .map(|&seed| {
            std::thread::spawn(move || -> regionsynth::Result<(u64, Vec<(f64, f64)>)> {
                let bench_cfg = BenchmarkConfig { cov_scale: 0.15, seed, ..Default::default() };
                let bench = generate_benchmark(&bench_cfg, seed)?;
                let mut cfg = TrainConfig { seed, epochs, hidden: 256, ..Default::default() };
                cfg.learning_rate = lr;
                cfg.weights.cls = l1;
                cfg.weights.intra_sd = l2;
                cfg.weights.inter_sp = l3;
                cfg.noise.dim = d_z;
                cfg.classifier_epochs = clf_epochs;
                let rows = run_ablation(&bench, &cfg, &AblationVariant::ALL)?;
                Ok((
                    seed,
                    rows.iter()
                        .map(|r| (r.zsd.zsd_accuracy, r.gzsd.unseen_mean))
                        .collect(),
                ))
            })
        })
        .collect();

    println!("epochs={epochs} lr={lr} l1={l1} l2={l2} l3={l3}");
    println!("seed |      b        b+Sd     b+Sd+Sps   b+Sd+Sp   (zsd/gzsd-U)");
    let mut per_variant: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for h in handles {
        let (seed, vals) = h.join().unwrap()?;
        print!("{seed:>4} |");
        for (i, (zsd, u)) in vals.iter().enumerate() {
            print!("  {zsd:5.1}/{u:5.1}");
            per_variant[i].push(*u);
        }
        println!();
    }
    // paired comparison must happen before sorting for medians
    let sp_wins = per_variant[3]
        .iter()
        .zip(&per_variant[2])
        .filter(|(sp, sps)| sp >= sps)
        .count();
    let median = |xs: &mut Vec<f64>| {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs[xs.len() / 2]
    };
    let meds: Vec<f64> = per_variant.iter_mut().map(median).collect();
    println!(
        "median gzsd-U: b={:.1} b+Sd={:.1} b+Sd+Sps={:.1} b+Sd+Sp={:.1}",
        meds[0], meds[1], meds[2], meds[3]
    );
    let ordering = meds[0] <= meds[1] && meds[1] <= meds[3];
    println!(
        "criterion: ordering {} | sp>=sps in {}/{} seeds",
        if ordering { "PASS" } else { "FAIL" },
        sp_wins,
        per_variant[3].len()
    );
    Ok(())
}

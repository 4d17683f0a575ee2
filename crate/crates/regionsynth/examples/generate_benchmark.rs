//! Generate a synthetic region-feature benchmark, check that the
//! semantic-to-mean relationship is learnable (the property that makes
//! zero-shot transfer possible), and write it to disk.
//!
//! Run with: cargo run --example generate_benchmark [out_dir]

use regionsynth::data::{
    generate_benchmark, ridge_transfer_cosines, save_benchmark, BenchmarkConfig,
};

fn main() -> regionsynth::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/benchmark".into());
    let cfg = BenchmarkConfig::default();
    let bench = generate_benchmark(&cfg, cfg.seed)?;

    println!(
        "{} seen / {} unseen classes, d_f={}, d_w={}",
        bench.seen.len(),
        bench.unseen.len(),
        bench.d_f(),
        bench.d_w()
    );
    println!(
        "train {} | proposals {} | backgrounds {} | test {}+{}+{}",
        bench.train.len(),
        bench.proposals.len(),
        bench.backgrounds.len(),
        bench.test_seen.len(),
        bench.test_unseen.len(),
        bench.test_backgrounds.len()
    );
    for (id, cos) in ridge_transfer_cosines(&bench, 1e-3)? {
        println!("ridge transfer cosine for unseen class {id}: {cos:.4}");
    }

    let files = save_benchmark(&bench, &cfg, std::path::Path::new(&out))?;
    println!("wrote {} files to {out}", files.len());
    Ok(())
}

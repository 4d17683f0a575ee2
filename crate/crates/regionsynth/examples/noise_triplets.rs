//! Sample query/positive/negative noise triplets and verify the box
//! conditions that define them.
//!
//! Run with: cargo run --example noise_triplets

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regionsynth::sampling::{sample_triplet, NoisePairConfig};

fn main() -> regionsynth::Result<()> {
    let cfg = NoisePairConfig::new(1e-4, 10, 32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let t = sample_triplet(&cfg, &mut rng)?;
    let max_pos_dev = t
        .positive
        .data()
        .iter()
        .zip(t.query.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    println!("query dim {}, positive max deviation {max_pos_dev:.2e} (r = {:.0e})", cfg.dim, cfg.radius);
    let min_neg_dev = t
        .negatives
        .iter()
        .flat_map(|n| n.data().iter().zip(t.query.data()).map(|(x, q)| (x - q).abs()))
        .fold(f64::INFINITY, f64::min);
    println!("{} negatives, min coordinate deviation {min_neg_dev:.3} (> r)", t.negatives.len());

    let mut checked = 0usize;
    for _ in 0..10_000 {
        let t = sample_triplet(&cfg, &mut rng)?;
        assert!(t.satisfies(&cfg));
        checked += 1;
    }
    println!("{checked} triplets satisfy the box conditions");
    Ok(())
}

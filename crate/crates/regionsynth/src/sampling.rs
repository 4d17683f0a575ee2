//! Query / positive / negative noise construction for the intra-class
//! diverging loss.
//!
//! A query `z ~ N(0,1)` gets a positive inside the per-coordinate box of
//! radius `r` (`z + rho`, `rho ~ U[-r, r]` per coordinate) and `N`
//! negatives rejection-sampled from `N(0,1)` until every coordinate
//! differs from the query by more than `r` (element-wise condition).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Reject after this many consecutive failed draws per call.
const REJECTION_CAP_FACTOR: usize = 1000;

#[derive(Copy, Clone, Debug)]
pub struct NoisePairConfig {
    /// Box radius `r` around the query.
    pub radius: Real,
    /// Number of negatives `N`.
    pub negatives: usize,
    /// Noise dimension.
    pub dim: usize,
}

impl NoisePairConfig {
    pub fn new(radius: Real, negatives: usize, dim: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("radius must be > 0, got {radius}")));
        }
        if negatives == 0 {
            return Err(Error::Config("negative count must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::Config("noise dimension must be >= 1".into()));
        }
        Ok(NoisePairConfig { radius, negatives, dim })
    }
}

#[derive(Clone, Debug)]
pub struct NoiseTriplet {
    pub query: Tensor,
    pub positive: Tensor,
    pub negatives: Vec<Tensor>,
}

impl NoiseTriplet {
    /// Check the defining box conditions.
    pub fn satisfies(&self, cfg: &NoisePairConfig) -> bool {
        let q = self.query.data();
        let pos_ok = self
            .positive
            .data()
            .iter()
            .zip(q)
            .all(|(p, z)| (p - z).abs() <= cfg.radius);
        let neg_ok = self.negatives.iter().all(|n| {
            n.data()
                .iter()
                .zip(q)
                .all(|(x, z)| (x - z).abs() > cfg.radius)
        });
        pos_ok && neg_ok && self.negatives.len() == cfg.negatives
    }
}

/// i.i.d. standard normal query vector.
pub fn sample_query(cfg: &NoisePairConfig, rng: &mut ChaCha8Rng) -> Tensor {
    standard_normal(cfg.dim, rng)
}

pub(crate) fn standard_normal(dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data: Vec<Real> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::vector(data)
}

/// `z + rho` with `rho ~ U[-r, r]` per coordinate.
pub fn sample_positive(query: &Tensor, cfg: &NoisePairConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let data = query
        .data()
        .iter()
        .map(|z| z + rng.random_range(-cfg.radius..=cfg.radius))
        .collect();
    Tensor::vector(data)
}

/// Rejection-sample `N` standard normal vectors whose every coordinate
/// differs from the query by more than `r`.
pub fn sample_negatives(
    query: &Tensor,
    cfg: &NoisePairConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor>> {
    let cap = REJECTION_CAP_FACTOR * cfg.negatives;
    let mut out = Vec::with_capacity(cfg.negatives);
    let mut consecutive_rejections = 0usize;
    while out.len() < cfg.negatives {
        let candidate = standard_normal(cfg.dim, rng);
        let accepted = candidate
            .data()
            .iter()
            .zip(query.data())
            .all(|(x, z)| (x - z).abs() > cfg.radius);
        if accepted {
            out.push(candidate);
            consecutive_rejections = 0;
        } else {
            consecutive_rejections += 1;
            if consecutive_rejections >= cap {
                return Err(Error::SamplingInfeasible(format!(
                    "{cap} consecutive rejections at r={} in {} dims",
                    cfg.radius, cfg.dim
                )));
            }
        }
    }
    Ok(out)
}

pub fn sample_triplet(cfg: &NoisePairConfig, rng: &mut ChaCha8Rng) -> Result<NoiseTriplet> {
    let query = sample_query(cfg, rng);
    let positive = sample_positive(&query, cfg, rng);
    let negatives = sample_negatives(&query, cfg, rng)?;
    Ok(NoiseTriplet { query, positive, negatives })
}

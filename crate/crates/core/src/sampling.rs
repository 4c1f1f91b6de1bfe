//! Importance sampling of a single voxel from a fused distribution.
//!
//! Voxels are drawn from `k_j = q_j (1 − Vε) + ε` with `Vε` fixed at
//! [`EXPLORATION_MASS`], and reweighted by `r_j = q_j / k_j` so the sampled
//! objective stays an unbiased estimate of its expectation under `q`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::VoxelDistribution;

/// Total probability mass spread uniformly over the support.
pub const EXPLORATION_MASS: f64 = 0.064;

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceSample {
    /// Voxel index in the full grid.
    pub voxel: usize,
    /// Position of the voxel in the support list.
    pub slot: usize,
    /// `q_j / k_j`.
    pub ratio: f64,
    /// Sampling distribution over the support, support order.
    pub k: Vec<f64>,
}

/// Per-voxel uniform floor `ε = 0.064 / V`.
pub fn exploration_floor(support_len: usize) -> f64 {
    EXPLORATION_MASS / support_len as f64
}

/// `k` over the support, given `q` in support order.
pub fn importance_weights(q_support: &[f64]) -> Vec<f64> {
    let eps = exploration_floor(q_support.len());
    let keep = 1.0 - EXPLORATION_MASS;
    q_support.iter().map(|&q| q * keep + eps).collect()
}

/// `k` over the full grid (zero outside the support).
pub fn importance_distribution(dist: &VoxelDistribution) -> Vec<f64> {
    let k = importance_weights(&dist.support_probs());
    let mut full = vec![0.0; dist.q.len()];
    for (&j, &v) in dist.support.iter().zip(&k) {
        full[j] = v;
    }
    full
}

/// Inverse-CDF draw from `k` over the support.
pub fn sample_index<R: Rng + ?Sized>(k: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let cdf: Vec<f64> = k
        .iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect();
    let total = acc;
    let pos = cdf.partition_point(|&c| c <= u * total);
    pos.min(k.len() - 1)
}

pub fn sample_voxel<R: Rng + ?Sized>(dist: &VoxelDistribution, rng: &mut R) -> ImportanceSample {
    let q = dist.support_probs();
    let k = importance_weights(&q);
    let slot = sample_index(&k, rng);
    ImportanceSample {
        voxel: dist.support[slot],
        slot,
        ratio: q[slot] / k[slot],
        k,
    }
}

/// Independent generator for one work item, derived from the run seed.
pub fn child_rng(seed: u64, item: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(item);
    rng
}

//! Reproducible random-number streams.
//!
//! Every parallel unit of work (bootstrap replicate, simulation
//! replication) derives its own generator from the master seed plus a
//! path of integer labels, so results do not depend on worker count or
//! scheduling order.

use rand::Rng;
use rand_pcg::Pcg64Mcg;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a path of stream labels.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut state = mix64(master);
    for &label in path {
        state = mix64(state ^ label.wrapping_mul(0xD6E8FEB86659FD93));
    }
    state
}

/// Derive a generator from a master seed and a path of stream labels,
/// e.g. `stream(seed, &[DOMAIN_SIMPLE, replicate])`.
pub fn stream(master: u64, path: &[u64]) -> Pcg64Mcg {
    let state = derive(master, path);
    Pcg64Mcg::new(state as u128 | ((mix64(state) as u128) << 64))
}

// Stream domains. Distinct constants keep the draws of unrelated
// procedures independent even under a shared master seed.
pub const DOMAIN_DGP: u64 = 1;
pub const DOMAIN_TRUTH: u64 = 2;
pub const DOMAIN_COV_BOOT: u64 = 3;
pub const DOMAIN_SIMPLE_BOOT: u64 = 4;
pub const DOMAIN_WILD_BOOT: u64 = 5;
pub const DOMAIN_PSI_BOOT: u64 = 6;

/// Sample `n` indices uniformly with replacement from `src`.
pub fn resample<R: Rng>(rng: &mut R, src: &[usize], n: usize) -> Vec<usize> {
    (0..n).map(|_| src[rng.gen_range(0..src.len())]).collect()
}

//! Seeded random streams and the replica seed-splitting rule.
//!
//! Every simulation call owns a [`Stream`]. Replica `k` of an experiment
//! with master seed `m` uses `replica_seed(m, k)`, which mixes the replica
//! index into the master seed through two rounds of splitmix64. The mapping
//! is fixed so that outputs are reproducible across thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG type used by every engine.
pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica (or chain) `index` derived from `master`.
pub fn replica_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Seed for a named sub-experiment (e.g. the two sides of a duality check).
pub fn substream_seed(master: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(splitmix64(master), |acc, b| splitmix64(acc ^ u64::from(b)))
}

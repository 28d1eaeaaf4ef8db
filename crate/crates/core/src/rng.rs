//! Seeded random streams.
//!
//! Every run of a filter owns one [`Stream`]. Batches derive the per-run seed
//! with [`derive_seed`], which is part of the reproducibility contract: the
//! same master seed always yields the same sequence of run seeds, whatever the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The random stream used throughout the crate.
pub type Stream = ChaCha12Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `index` under master seed `master`:
/// `splitmix64(master ^ splitmix64(index))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// A fresh stream seeded from a 64-bit value.
pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

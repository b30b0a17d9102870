//! Seed derivation helpers.
//!
//! Every random stream in the pipeline (weight init, corpus synthesis,
//! per-epoch shuffling, patch cropping) is a ChaCha8 generator keyed from a
//! master seed plus a small number of stream labels. Deriving sub-seeds with
//! a mixer instead of reusing one generator keeps streams independent of the
//! order in which they are consumed, which is what makes checkpoint resume
//! and parallel corpus synthesis reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; a solid 64-bit mixer with full avalanche.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with stream labels into one sub-seed.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &l in labels {
        s = splitmix64(s ^ l.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    s
}

/// A ChaCha8 generator for the given master seed and stream labels.
pub fn stream(master: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, labels))
}
